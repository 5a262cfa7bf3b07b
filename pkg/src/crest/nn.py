"""Dense tanh networks with orthogonal initialization and manual backprop.

A network is a list of independent heads. Each head reads a subset of the
context (after an optional affine normalization of the full context) and
produces a slice of the output. A head with no inputs reads a constant 1.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from crest.core import ContextSchema, StructureGraph

FORMAT_TAG = "crest-dense-net/1"
KINDS = ("MLP", "RMLP", "PMLP", "PMLP-R")


@dataclass(frozen=True)
class HeadSpec:
    input_indices: tuple[int, ...]
    hidden_widths: tuple[int, ...]
    output_dim: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "input_indices", tuple(int(i) for i in self.input_indices))
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if any(w < 1 for w in self.hidden_widths) or self.output_dim < 1:
            raise ValueError("layer widths must be at least 1")

    @property
    def input_dim(self) -> int:
        # an empty input set is fed a constant 1
        return max(len(self.input_indices), 1)

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_widths, self.output_dim)


@dataclass(frozen=True)
class NetworkSpec:
    heads: tuple[HeadSpec, ...]
    n_inputs: int
    hidden_scale: float = math.sqrt(2.0)
    output_scale: float = 0.01
    input_center: tuple[float, ...] | None = None
    input_halfwidth: tuple[float, ...] | None = None
    activation: str = "tanh"

    def __post_init__(self) -> None:
        object.__setattr__(self, "heads", tuple(self.heads))
        if not self.heads:
            raise ValueError("a network needs at least one head")
        if self.activation != "tanh":
            raise ValueError("only tanh activations are supported")
        for h in self.heads:
            if any(not 0 <= i < self.n_inputs for i in h.input_indices):
                raise ValueError("head input index out of range")
        for name in ("input_center", "input_halfwidth"):
            v = getattr(self, name)
            if v is not None:
                v = tuple(float(x) for x in v)
                if len(v) != self.n_inputs:
                    raise ValueError(f"{name} must have length {self.n_inputs}")
                object.__setattr__(self, name, v)

    @property
    def output_dim(self) -> int:
        return sum(h.output_dim for h in self.heads)

    def normalize(self, contexts: np.ndarray) -> np.ndarray:
        x = np.asarray(contexts, dtype=float)
        if self.input_center is not None:
            x = x - np.asarray(self.input_center)
        if self.input_halfwidth is not None:
            x = x / np.asarray(self.input_halfwidth)
        return x

    def head_inputs(self, head: HeadSpec, x: np.ndarray) -> np.ndarray:
        if not head.input_indices:
            return np.ones((x.shape[0], 1))
        return x[:, list(head.input_indices)]

    def to_json(self) -> dict:
        return {
            "heads": [{"input_indices": list(h.input_indices), "hidden_widths": list(h.hidden_widths),
                       "output_dim": h.output_dim} for h in self.heads],
            "n_inputs": self.n_inputs,
            "hidden_scale": self.hidden_scale,
            "output_scale": self.output_scale,
            "input_center": None if self.input_center is None else list(self.input_center),
            "input_halfwidth": None if self.input_halfwidth is None else list(self.input_halfwidth),
            "activation": self.activation,
        }

    @classmethod
    def from_json(cls, data: dict) -> NetworkSpec:
        heads = tuple(HeadSpec(tuple(h["input_indices"]), tuple(h["hidden_widths"]), h["output_dim"])
                      for h in data["heads"])
        return cls(heads, data["n_inputs"], data["hidden_scale"], data["output_scale"],
                   data.get("input_center"), data.get("input_halfwidth"), data.get("activation", "tanh"))


Layer = tuple[np.ndarray, np.ndarray]


@dataclass(eq=False)
class NetworkWeights:
    """Per head, a list of ``(W, b)`` with ``W`` of shape ``(out, in)``."""

    heads: list[list[Layer]]
    log_std: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def arrays(self) -> list[np.ndarray]:
        out = [a for head in self.heads for layer in head for a in layer]
        out.append(self.log_std)
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec: np.ndarray) -> NetworkWeights:
        vec = np.asarray(vec, dtype=float)
        pos = 0

        def take(shape):
            nonlocal pos
            n = int(np.prod(shape))
            arr = vec[pos:pos + n].reshape(shape).copy()
            pos += n
            return arr

        heads = [[(take(W.shape), take(b.shape)) for W, b in head] for head in self.heads]
        log_std = take(self.log_std.shape)
        if pos != vec.shape[0]:
            raise ValueError(f"flat vector has {vec.shape[0]} entries, expected {pos}")
        return NetworkWeights(heads, log_std)

    def copy(self) -> NetworkWeights:
        return self.with_flat(self.flat())

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays())

    def zeros_like(self) -> NetworkWeights:
        return self.with_flat(np.zeros(self.size))


def orthogonal(rows: int, cols: int, scale: float, rng: np.random.Generator) -> np.ndarray:
    """``scale`` times a matrix with orthonormal rows or columns (the smaller set).

    QR of a standard-normal matrix with the signs of ``diag(R)`` folded into
    ``Q`` so the factor is unique.
    """
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.where(np.diag(r) < 0, -1.0, 1.0)
    w = q if rows >= cols else q.T
    return scale * w


def init_weights(spec: NetworkSpec, rng: np.random.Generator, with_log_std: bool = True) -> NetworkWeights:
    heads = []
    for h in spec.heads:
        sizes = h.layer_sizes
        layers = []
        for k in range(len(sizes) - 1):
            scale = spec.output_scale if k == len(sizes) - 2 else spec.hidden_scale
            layers.append((orthogonal(sizes[k + 1], sizes[k], scale, rng), np.zeros(sizes[k + 1])))
        heads.append(layers)
    log_std = np.zeros(spec.output_dim if with_log_std else 0)
    return NetworkWeights(heads, log_std)


def _check_inputs(spec: NetworkSpec, contexts: np.ndarray) -> np.ndarray:
    x = np.asarray(contexts, dtype=float)
    if x.ndim == 1:
        x = x[None]
    if x.ndim != 2 or x.shape[1] != spec.n_inputs:
        raise ValueError(f"expected contexts of shape (B, {spec.n_inputs}), got {np.shape(contexts)}")
    return x


def head_forward(layers: Sequence[Layer], x: np.ndarray):
    """Affine-tanh stack with a linear output layer; returns output and activations."""
    acts = [x]
    h = x
    for k, (W, b) in enumerate(layers):
        if W.shape[1] != h.shape[1]:
            raise ValueError(f"layer {k} expects {W.shape[1]} inputs, got {h.shape[1]}")
        z = h @ W.T + b
        h = z if k == len(layers) - 1 else np.tanh(z)
        acts.append(h)
    return h, acts


def head_backward(layers: Sequence[Layer], acts: list[np.ndarray], grad_out: np.ndarray) -> list[Layer]:
    grads: list[Layer] = [None] * len(layers)  # type: ignore[list-item]
    g = grad_out
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        if k < len(layers) - 1:
            g = g * (1.0 - acts[k + 1] ** 2)
        grads[k] = (g.T @ acts[k], g.sum(axis=0))
        g = g @ W
    return grads


def forward(spec: NetworkSpec, weights: NetworkWeights, contexts: np.ndarray) -> np.ndarray:
    """Network output ``(B, output_dim)`` for full context vectors ``(B, n_inputs)``."""
    return forward_with_cache(spec, weights, contexts)[0]


def forward_with_cache(spec: NetworkSpec, weights: NetworkWeights, contexts: np.ndarray):
    x = spec.normalize(_check_inputs(spec, contexts))
    outs, caches = [], []
    for h, layers in zip(spec.heads, weights.heads):
        y, acts = head_forward(layers, spec.head_inputs(h, x))
        outs.append(y)
        caches.append(acts)
    return np.concatenate(outs, axis=1), caches


def backward(spec: NetworkSpec, weights: NetworkWeights, contexts: np.ndarray, grad_out: np.ndarray,
             cache=None) -> NetworkWeights:
    """Gradient of ``sum(grad_out * forward(contexts))`` with respect to the weights.

    The returned ``log_std`` gradient is zero; the caller owns that term.
    """
    if cache is None:
        _, cache = forward_with_cache(spec, weights, contexts)
    grad_out = np.asarray(grad_out, dtype=float)
    if grad_out.ndim == 1:
        grad_out = grad_out[None]
    if grad_out.shape != (cache[0][0].shape[0], spec.output_dim):
        raise ValueError(f"output gradient of shape {grad_out.shape}, expected (B, {spec.output_dim})")
    heads, col = [], 0
    for h, layers, acts in zip(spec.heads, weights.heads, cache):
        heads.append(head_backward(layers, acts, grad_out[:, col:col + h.output_dim]))
        col += h.output_dim
    return NetworkWeights(heads, np.zeros_like(weights.log_std))


def count_params(spec: NetworkSpec, log_std: bool = False) -> int:
    n = sum(a * b + b for h in spec.heads for a, b in zip(h.layer_sizes[:-1], h.layer_sizes[1:]))
    return n + (spec.output_dim if log_std else 0)


def _normalization(schema: ContextSchema):
    lo, hi = schema.lower, schema.upper
    return tuple(0.5 * (lo + hi)), tuple(0.5 * (hi - lo))


def _pmlp_r_width(schema: ContextSchema, structure: StructureGraph, d: int, base_hidden: int,
                  reference: int) -> int:
    """Per-head width (a multiple of ``base_hidden``) whose actor+critic count is closest to ``reference``."""
    best, best_gap = base_hidden, None
    tau = tuple(sorted(structure.relevant))
    for m in range(1, 4 * d + 1):
        w = m * base_hidden
        actor = NetworkSpec(tuple(HeadSpec(tuple(sorted(p)), (w,) * 3, 1) for p in structure.parents), schema.dimension)
        critic = NetworkSpec((HeadSpec(tau, (w,) * 3, 1),), schema.dimension)
        gap = abs(count_params(actor, True) + count_params(critic) - reference)
        if best_gap is None or gap < best_gap:
            best, best_gap = w, gap
    return best


def build_policy(kind: str, schema: ContextSchema, structure: StructureGraph | None, d: int,
                 base_hidden: int = 8, depth: int = 3, normalize_inputs: bool = True) -> tuple[NetworkSpec, NetworkSpec]:
    """Actor and critic specs for one architecture kind.

    MLP reads the full context, RMLP reads the relevant set, PMLP has one
    head per parameter reading its parent set. PMLP-R is a PMLP widened to
    roughly the RMLP's actor+critic weight count.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown architecture {kind!r}; choose from {KINDS}")
    if kind != "MLP" and structure is None:
        raise ValueError(f"{kind} needs a discovered structure")
    if structure is not None and structure.n_params != d:
        raise ValueError(f"structure has {structure.n_params} parameters, expected {d}")
    center, half = _normalization(schema) if normalize_inputs else (None, None)
    n = schema.dimension
    wide = (base_hidden * d,) * depth

    def spec(heads):
        return NetworkSpec(tuple(heads), n, input_center=center, input_halfwidth=half)

    if kind == "MLP":
        full = tuple(range(n))
        return spec([HeadSpec(full, wide, d)]), spec([HeadSpec(full, wide, 1)])
    tau = tuple(sorted(structure.relevant))
    if kind == "RMLP":
        return spec([HeadSpec(tau, wide, d)]), spec([HeadSpec(tau, wide, 1)])
    for j, p in enumerate(structure.parents):
        if not p:
            warnings.warn(f"parameter {j} has no parents; its head reads a constant input", stacklevel=2)
    if kind == "PMLP":
        width = base_hidden
    else:
        rmlp_actor, rmlp_critic = build_policy("RMLP", schema, structure, d, base_hidden, depth, normalize_inputs)
        reference = count_params(rmlp_actor, True) + count_params(rmlp_critic)
        width = _pmlp_r_width(schema, structure, d, base_hidden, reference)
    hidden = (width,) * depth
    actor = spec([HeadSpec(tuple(sorted(p)), hidden, 1) for p in structure.parents])
    return actor, spec([HeadSpec(tau, hidden, 1)])


def weights_to_json(spec: NetworkSpec, weights: NetworkWeights) -> dict:
    return {
        "format": FORMAT_TAG,
        "spec": spec.to_json(),
        "heads": [[{"W": W.tolist(), "b": b.tolist()} for W, b in head] for head in weights.heads],
        "log_std": weights.log_std.tolist(),
    }


def weights_from_json(data: dict) -> tuple[NetworkSpec, NetworkWeights]:
    if data.get("format") != FORMAT_TAG:
        raise ValueError(f"unsupported weight format {data.get('format')!r}")
    spec = NetworkSpec.from_json(data["spec"])
    heads = [[(np.array(layer["W"], dtype=float), np.array(layer["b"], dtype=float)) for layer in head]
             for head in data["heads"]]
    weights = NetworkWeights(heads, np.array(data["log_std"], dtype=float))
    for h, layers in zip(spec.heads, weights.heads):
        sizes = h.layer_sizes
        for k, (W, b) in enumerate(layers):
            if W.shape != (sizes[k + 1], sizes[k]) or b.shape != (sizes[k + 1],):
                raise ValueError("weight shapes disagree with the embedded spec")
    return spec, weights


def save_weights(path, spec: NetworkSpec, weights: NetworkWeights) -> None:
    with open(path, "w") as fh:
        json.dump(weights_to_json(spec, weights), fh)


def load_weights(path) -> tuple[NetworkSpec, NetworkWeights]:
    with open(path) as fh:
        return weights_from_json(json.load(fh))
