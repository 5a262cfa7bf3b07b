"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

from __future__ import annotations

LINES: list[str] = []


def record(number: int, name: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number} ({name}): {detail}"
    LINES.append(line)
    print(line)
