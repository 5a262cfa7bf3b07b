"""Causal structure discovery and structured policy transfer."""
