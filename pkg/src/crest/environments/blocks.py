"""Block stacking with a three-waypoint straight-line skill.

Block 0 is grasped, lifted, moved horizontally by (dx, dz) and lowered so
that its net vertical displacement is dy. The goal is block 0 resting on
block 1. All blocks start on the table plane y = 0, so only heights enter
the vertical geometry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from crest.core import (
    ContextDistribution, ContextSchema, ContextVector, PolicyParameters, StructureGraph, TaskOutcome, Variable,
)
from crest.environments.base import Environment

BLOCK_FIELDS = ("x", "z", "psi", "h", "red", "green", "blue")
COLOR_FIELDS = ("red", "green", "blue")
REAL_ROBOT_HEIGHTS = (0.057, 0.076)
BLOCK_WIDTH = 0.042

DEFAULT_BLOCK_BOUNDS = {
    "x": (0.05, 0.55),
    "z": (-0.25, 0.25),
    "psi": (-np.pi / 4, np.pi / 4),
    "h": (0.04, 0.08),
    "red": (0.0, 1.0),
    "green": (0.0, 1.0),
    "blue": (0.0, 1.0),
}


def block_variables(b: int, bounds: dict | None = None) -> list[Variable]:
    bounds = {**DEFAULT_BLOCK_BOUNDS, **(bounds or {})}
    return [Variable(f"{f}_{b}", *bounds[f], f"block_{b}") for f in BLOCK_FIELDS]


def blocks_schema(n_blocks: int, bounds: dict | None = None) -> ContextSchema:
    if n_blocks < 2:
        raise ValueError("block stacking needs at least two blocks")
    return ContextSchema(tuple(v for b in range(n_blocks) for v in block_variables(b, bounds)))


def color_indices(schema: ContextSchema) -> tuple[int, ...]:
    return tuple(i for i, v in enumerate(schema.variables) if v.name.split("_")[0] in COLOR_FIELDS)


def color_half_distribution(dist: ContextDistribution, half: str) -> ContextDistribution:
    """Restrict every color channel to the lower or upper half of [0, 1]."""
    lo, hi = {"lower": (0.0, 0.5), "upper": (0.5, 1.0)}[half]
    return dist.with_bounds(color_indices(dist.schema), lo, hi)


@dataclass(frozen=True)
class TargetShiftConfig:
    """Target-domain proxy: execution noise plus an optional color half-space."""

    exec_noise: float = 0.0
    color_half: str | None = None
    success_threshold: float = -0.025


class BlocksEnv(Environment):
    name = "blocks"
    param_names_default = ("dx", "dy", "dz")

    def __init__(self, n_blocks: int = 2, success_threshold: float = -0.01, exec_noise: float = 0.0,
                 lift_height: float = 0.2, reward_weight: float = 1.0, discrete_heights: bool = False,
                 bounds: dict | None = None):
        self.n_blocks = n_blocks
        self.schema = blocks_schema(n_blocks, bounds)
        self.param_names = self.param_names_default
        self.param_lower = np.array([-0.5, 0.0, -0.5])
        self.param_upper = np.array([0.5, 0.12, 0.5])
        self.success_threshold = float(success_threshold)
        self.exec_noise = float(exec_noise)
        self.stochastic = exec_noise > 0
        self.lift_height = lift_height
        self.reward_weight = reward_weight
        self.discrete_heights = discrete_heights
        idx = self.schema.index
        self._cols = {k: idx(k) for k in ("x_0", "z_0", "h_0", "x_1", "z_1", "h_1")}

    def _unpack(self, contexts):
        c = self._cols
        return (contexts[:, c["x_0"]], contexts[:, c["z_0"]], contexts[:, c["h_0"]],
                contexts[:, c["x_1"]], contexts[:, c["z_1"]], contexts[:, c["h_1"]])

    def achieved_position(self, contexts: np.ndarray, thetas: np.ndarray) -> np.ndarray:
        x0, z0, h0, *_ = self._unpack(np.atleast_2d(contexts))
        thetas = np.atleast_2d(thetas)
        # lift by y_p, translate, then move vertically by dy - y_p
        y = 0.5 * h0 + self.lift_height
        x = x0 + thetas[:, 0]
        z = z0 + thetas[:, 2]
        y = y + (thetas[:, 1] - self.lift_height)
        return np.stack([x, y, z], axis=-1)

    def goal_position(self, contexts: np.ndarray) -> np.ndarray:
        contexts = np.atleast_2d(contexts)
        _, _, h0, x1, z1, h1 = self._unpack(contexts)
        y1 = 0.5 * h1
        return np.stack([x1, 0.5 * h0 + 0.5 * h1 + y1, z1], axis=-1)

    def position_error(self, contexts: np.ndarray, thetas: np.ndarray) -> np.ndarray:
        """Achieved minus goal position of block 0.

        Computed from displacements relative to the start of block 0, so the
        half-height of block 0 cancels exactly rather than numerically.
        """
        x0, z0, _, x1, z1, h1 = self._unpack(np.atleast_2d(contexts))
        thetas = np.atleast_2d(thetas)
        dy = self.lift_height + (thetas[:, 1] - self.lift_height)
        return np.stack([x0 + thetas[:, 0] - x1, dy - h1, z0 + thetas[:, 2] - z1], axis=-1)

    def rewards(self, contexts, thetas, rng=None):
        contexts = np.atleast_2d(contexts)
        thetas = np.atleast_2d(thetas)
        n = max(len(contexts), len(thetas))
        contexts = np.broadcast_to(contexts, (n, contexts.shape[1]))
        thetas = np.broadcast_to(thetas, (n, thetas.shape[1]))
        err = self.position_error(contexts, thetas)
        if self.exec_noise > 0:
            if rng is None:
                raise ValueError("execution noise needs an rng")
            err = err + rng.normal(0.0, self.exec_noise, size=err.shape)
        return -self.reward_weight * np.linalg.norm(err, axis=-1)

    def diagnostics(self, context, theta):
        err = self.position_error(context, theta)[0]
        return {"error_x": float(err[0]), "error_y": float(err[1]), "error_z": float(err[2])}

    def default_distribution(self) -> ContextDistribution:
        if not self.discrete_heights:
            return ContextDistribution(self.schema)
        choices = {i: REAL_ROBOT_HEIGHTS for i, v in enumerate(self.schema.variables) if v.name.startswith("h_")}
        return ContextDistribution(self.schema, choices=choices)

    def has_oracle(self) -> bool:
        return True

    def optimal(self, contexts: np.ndarray) -> np.ndarray:
        contexts = np.atleast_2d(contexts)
        x0, z0, _, x1, z1, h1 = self._unpack(contexts)
        return np.stack([x1 - x0, h1, z1 - z0], axis=-1)

    def truth(self) -> StructureGraph:
        i = self.schema.index
        return StructureGraph(
            frozenset(i(n) for n in ("x_0", "x_1", "h_1", "z_0", "z_1")),
            (frozenset({i("x_0"), i("x_1")}), frozenset({i("h_1")}), frozenset({i("z_0"), i("z_1")})),
            self.schema.dimension,
        )


def blocks_target_env(n_blocks: int, shift: TargetShiftConfig, **kwargs) -> BlocksEnv:
    env = BlocksEnv(n_blocks, success_threshold=shift.success_threshold, exec_noise=shift.exec_noise, **kwargs)
    env.name = "blocks-target"
    return env


def blocks_evaluate(c: ContextVector, theta: PolicyParameters | np.ndarray, success_threshold: float = -0.01) -> TaskOutcome:
    n_blocks = c.schema.dimension // len(BLOCK_FIELDS)
    if c.schema.dimension != n_blocks * len(BLOCK_FIELDS):
        raise ValueError(f"context length {c.schema.dimension} is not a multiple of {len(BLOCK_FIELDS)}")
    env = BlocksEnv(n_blocks, success_threshold=success_threshold)
    return env.evaluate(c.values, theta)


def blocks_optimal(c: ContextVector) -> PolicyParameters:
    n_blocks = c.schema.dimension // len(BLOCK_FIELDS)
    env = BlocksEnv(n_blocks)
    return env.params(env.optimal(c.values[None])[0])


def blocks_target_evaluate(c: ContextVector, theta: PolicyParameters | np.ndarray, shift: TargetShiftConfig,
                           rng: np.random.Generator | None = None) -> TaskOutcome:
    """Target proxy evaluation. The color half-space only affects sampling."""
    n_blocks = c.schema.dimension // len(BLOCK_FIELDS)
    return blocks_target_env(n_blocks, shift).evaluate(c.values, theta, rng)
