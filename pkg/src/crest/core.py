"""Domain types shared across the package.

Contexts are bounded real vectors described by a :class:`ContextSchema`.
Everything here is immutable once built; randomness always comes from an
explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np


def derive_rng(seed: int, *keys: int | str) -> np.random.Generator:
    """Generator for the stream identified by ``(seed, *keys)``.

    String keys are hashed with CRC32 so that named streams (e.g. variable
    names) stay stable when other variables are added or removed.
    """
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for key in keys:
        if isinstance(key, str):
            words.append(zlib.crc32(key.encode()))
        else:
            words.append(int(key) & 0xFFFFFFFFFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(words))


def derive_seed(seed: int, *keys: int | str) -> int:
    """Integer seed for a named sub-experiment, derived like :func:`derive_rng`."""
    return int(derive_rng(seed, *keys).integers(2**62))


def _frozen(values: Iterable[float]) -> np.ndarray:
    arr = np.array(list(values), dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Variable:
    name: str
    lower: float
    upper: float
    group: str = ""


@dataclass(frozen=True)
class ContextSchema:
    """Ordered, named, bounded context variables."""

    variables: tuple[Variable, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "variables", tuple(self.variables))
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ValueError("context variable names must be unique")
        for v in self.variables:
            if not (np.isfinite(v.lower) and np.isfinite(v.upper)):
                raise ValueError(f"non-finite bounds for {v.name!r}")
            if not v.lower < v.upper:
                raise ValueError(f"variable {v.name!r} needs lower < upper, got [{v.lower}, {v.upper}]")

    @property
    def dimension(self) -> int:
        return len(self.variables)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.variables)

    @property
    def lower(self) -> np.ndarray:
        return _frozen(v.lower for v in self.variables)

    @property
    def upper(self) -> np.ndarray:
        return _frozen(v.upper for v in self.variables)

    @property
    def midpoint(self) -> np.ndarray:
        return _frozen(0.5 * (v.lower + v.upper) for v in self.variables)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(name) from None

    def indices(self, names: Iterable[str]) -> tuple[int, ...]:
        return tuple(self.index(n) for n in names)

    def group_indices(self, group: str) -> tuple[int, ...]:
        return tuple(i for i, v in enumerate(self.variables) if v.group == group)

    def to_json(self) -> list[dict]:
        return [{"name": v.name, "lower": v.lower, "upper": v.upper, "group": v.group} for v in self.variables]

    @classmethod
    def from_json(cls, data: Sequence[Mapping]) -> ContextSchema:
        return cls(tuple(Variable(d["name"], float(d["lower"]), float(d["upper"]), d.get("group", "")) for d in data))

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def loads(cls, text: str) -> ContextSchema:
        return cls.from_json(json.loads(text))


@dataclass(frozen=True, eq=False)
class ContextVector:
    """A context, clamped to its schema bounds at construction."""

    schema: ContextSchema
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        if vals.shape[0] != self.schema.dimension:
            raise ValueError(f"context has {vals.shape[0]} values, schema expects {self.schema.dimension}")
        object.__setattr__(self, "values", _frozen(np.clip(vals, self.schema.lower, self.schema.upper)))

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, key: int | str) -> float:
        if isinstance(key, str):
            key = self.schema.index(key)
        return float(self.values[key])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ContextVector):
            return NotImplemented
        return self.schema == other.schema and np.array_equal(self.values, other.values)

    def replace(self, **updates: float) -> ContextVector:
        vals = self.values.copy()
        for name, value in updates.items():
            vals[self.schema.index(name)] = value
        return ContextVector(self.schema, vals)

    def to_json(self) -> dict:
        return {"schema": self.schema.to_json(), "values": self.values.tolist()}

    @classmethod
    def from_json(cls, data: Mapping) -> ContextVector:
        return cls(ContextSchema.from_json(data["schema"]), np.array(data["values"], dtype=float))


@dataclass(frozen=True)
class Intervention:
    index: int
    new_value: float

    def validate(self, schema: ContextSchema) -> None:
        if not 0 <= self.index < schema.dimension:
            raise IndexError(f"intervention index {self.index} out of range for dimension {schema.dimension}")
        var = schema.variables[self.index]
        if not var.lower <= self.new_value <= var.upper:
            raise ValueError(f"intervention value {self.new_value} outside [{var.lower}, {var.upper}] for {var.name!r}")

    def is_null(self, c: ContextVector) -> bool:
        """True when the intervention leaves ``c`` unchanged."""
        return float(c.values[self.index]) == float(self.new_value)


def apply_intervention(c: ContextVector, iv: Intervention) -> ContextVector:
    iv.validate(c.schema)
    vals = c.values.copy()
    vals[iv.index] = iv.new_value
    return ContextVector(c.schema, vals)


def sample_context(schema: ContextSchema, rng: np.random.Generator) -> ContextVector:
    return ContextVector(schema, rng.uniform(schema.lower, schema.upper))


@dataclass(frozen=True, eq=False)
class ContextDistribution:
    """Uniform distribution over (possibly narrowed) schema bounds.

    ``pinned`` maps variable index to a fixed value; ``choices`` maps a
    variable index to a finite set drawn uniformly. Sampling uses one stream
    per variable *name*, so two distributions that differ only in some
    variables produce identical values for all the others given a seed.
    """

    schema: ContextSchema
    lower: np.ndarray = None
    upper: np.ndarray = None
    pinned: Mapping[int, float] = field(default_factory=dict)
    choices: Mapping[int, tuple[float, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        lo = self.schema.lower if self.lower is None else np.asarray(self.lower, dtype=float)
        hi = self.schema.upper if self.upper is None else np.asarray(self.upper, dtype=float)
        if lo.shape != (self.schema.dimension,) or hi.shape != (self.schema.dimension,):
            raise ValueError("bounds must match schema dimension")
        if np.any(lo < self.schema.lower) or np.any(hi > self.schema.upper) or np.any(lo > hi):
            raise ValueError("distribution bounds must nest inside schema bounds")
        object.__setattr__(self, "lower", _frozen(lo))
        object.__setattr__(self, "upper", _frozen(hi))
        object.__setattr__(self, "pinned", dict(self.pinned))
        object.__setattr__(self, "choices", {k: tuple(v) for k, v in self.choices.items()})

    def with_bounds(self, indices: Iterable[int], lower: float, upper: float) -> ContextDistribution:
        lo, hi = self.lower.copy(), self.upper.copy()
        for i in indices:
            lo[i], hi[i] = lower, upper
        return ContextDistribution(self.schema, lo, hi, self.pinned, self.choices)

    def pin_except(self, keep: Iterable[int]) -> ContextDistribution:
        """Pin every variable not in ``keep`` at its schema midpoint."""
        keep = set(keep)
        mid = self.schema.midpoint
        pinned = {i: float(mid[i]) for i in range(self.schema.dimension) if i not in keep}
        pinned.update({i: v for i, v in self.pinned.items() if i not in keep})
        return ContextDistribution(self.schema, self.lower, self.upper, pinned, self.choices)

    def sample(self, n: int, seed: int, *stream: int | str) -> np.ndarray:
        out = np.empty((n, self.schema.dimension))
        for i, var in enumerate(self.schema.variables):
            u = derive_rng(seed, *stream, var.name).random(n)
            if i in self.pinned:
                out[:, i] = self.pinned[i]
            elif i in self.choices:
                opts = np.asarray(self.choices[i])
                out[:, i] = opts[np.minimum((u * len(opts)).astype(int), len(opts) - 1)]
            else:
                out[:, i] = self.lower[i] + u * (self.upper[i] - self.lower[i])
        return out


@dataclass(frozen=True, eq=False)
class PolicyParameters:
    """Controller parameter vector with named components."""

    values: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        names = tuple(self.names)
        if vals.shape[0] != len(names):
            raise ValueError(f"{vals.shape[0]} values for {len(names)} parameter names")
        object.__setattr__(self, "values", _frozen(vals))
        object.__setattr__(self, "names", names)

    def __len__(self) -> int:
        return len(self.names)

    def __getitem__(self, key: int | str) -> float:
        if isinstance(key, str):
            key = self.names.index(key)
        return float(self.values[key])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PolicyParameters):
            return NotImplemented
        return self.names == other.names and np.array_equal(self.values, other.values)

    def with_values(self, values: np.ndarray) -> PolicyParameters:
        return PolicyParameters(values, self.names)


@dataclass(frozen=True)
class StructureGraph:
    """Relevant context set plus one parent set per policy parameter."""

    relevant: frozenset[int]
    parents: tuple[frozenset[int], ...]
    n_context: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "relevant", frozenset(int(i) for i in self.relevant))
        object.__setattr__(self, "parents", tuple(frozenset(int(i) for i in p) for p in self.parents))
        for i in self.relevant:
            if not 0 <= i < self.n_context:
                raise ValueError(f"relevant index {i} out of range")
        for j, p in enumerate(self.parents):
            if not p <= self.relevant:
                raise ValueError(f"parents of parameter {j} not contained in the relevant set: {sorted(p - self.relevant)}")

    @property
    def n_params(self) -> int:
        return len(self.parents)

    def pairs(self) -> frozenset[tuple[int, int]]:
        return frozenset((j, k) for j, p in enumerate(self.parents) for k in p)

    def to_json(self, schema: ContextSchema | None = None, param_names: Sequence[str] | None = None) -> dict:
        name = (lambda i: schema.variables[i].name) if schema is not None else (lambda i: i)
        pnames = list(param_names) if param_names is not None else [str(j) for j in range(self.n_params)]
        return {
            "relevant": [name(i) for i in sorted(self.relevant)],
            "parents": {pnames[j]: [name(i) for i in sorted(p)] for j, p in enumerate(self.parents)},
        }

    @classmethod
    def from_json(cls, data: Mapping, schema: ContextSchema, param_names: Sequence[str]) -> StructureGraph:
        idx = lambda n: schema.index(n) if isinstance(n, str) else int(n)  # noqa: E731
        return cls(
            frozenset(idx(n) for n in data["relevant"]),
            tuple(frozenset(idx(n) for n in data["parents"].get(p, [])) for p in param_names),
            schema.dimension,
        )


@dataclass(frozen=True)
class TaskOutcome:
    reward: float
    success: bool
    diagnostics: Mapping[str, float] = field(default_factory=dict)
