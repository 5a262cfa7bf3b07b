"""Toy goal-reaching environment with a known causal structure.

The state is perturbed by the action through either a linear map or one
elementwise nonlinear function per action dimension; a one-hot goal
selection matrix picks the relevant state entries that make up the goal.
The context is the initial state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from crest.core import ContextSchema, ContextVector, PolicyParameters, StructureGraph, TaskOutcome, Variable
from crest.environments.base import Environment

FUNCTIONS = {
    "exponential": np.exp,
    "sigmoid": lambda x: 1.0 / (1.0 + np.exp(-x)),
    "sine": np.sin,
    "cosine": np.cos,
}

# σ_a used for the "Limited" noise setting, relative to an action range of [-1, 1]
LIMITED_NOISE = 0.01
NOISE_LEVELS = {"none": 0.0, "limited": LIMITED_NOISE}
# success iff the goal residual norm is at most this
SUCCESS_EPS = 0.06

_GRID = np.linspace(-1.0, 1.0, 2001)


@dataclass(frozen=True, eq=False)
class MathManipInstance:
    dim: int
    kind: str
    noise_sigma: float
    tau_true: tuple[int, ...]
    G: np.ndarray
    A: np.ndarray | tuple[str, ...]
    g_desired: np.ndarray
    s0: ContextVector

    def __post_init__(self) -> None:
        G = np.asarray(self.G)
        if not np.all(G.sum(axis=1) == 1) or not np.all((G == 0) | (G == 1)):
            raise ValueError("goal selection rows must be one-hot")
        cols = set(np.nonzero(G)[1].tolist())
        if cols != set(self.tau_true) or G.shape[0] != len(self.tau_true):
            raise ValueError("goal selection must map each relevant state to exactly one goal row")
        if G.shape[0] > self.dim:
            raise ValueError("goal dimension exceeds state dimension")

    @property
    def schema(self) -> ContextSchema:
        return self.s0.schema

    @property
    def home_state(self) -> np.ndarray:
        """State index each action dimension writes into."""
        if self.kind == "linear":
            return np.argmax(np.abs(self.A), axis=0)
        return np.arange(self.dim)

    def delta_state(self, thetas: np.ndarray) -> np.ndarray:
        thetas = np.atleast_2d(thetas)
        if self.kind == "linear":
            return thetas @ np.asarray(self.A).T
        out = np.empty_like(thetas, dtype=float)
        for j, fname in enumerate(self.A):
            out[:, j] = FUNCTIONS[fname](thetas[:, j])
        return out

    def truth(self) -> StructureGraph:
        tau = set(self.tau_true)
        if self.kind == "linear":
            A = np.asarray(self.A)
            parents = tuple(frozenset(i for i in tau if A[i, j] != 0.0) for j in range(self.dim))
        else:
            parents = tuple(frozenset({j} & tau) for j in range(self.dim))
        return StructureGraph(frozenset(tau), parents, self.dim)


def _reachable(f, target_center: float, halfwidth: float) -> bool:
    vals = f(_GRID)
    return vals.min() <= target_center - halfwidth and target_center + halfwidth <= vals.max()


def mathmanip_generate(dim: int, kind: str, noise_sigma: float, n_relevant: int, goal_dim: int | None = None,
                       rng: np.random.Generator | None = None, context_halfwidth: float = 0.2) -> MathManipInstance:
    """Random instance: relevant set, goal selection, controller and goal.

    The desired goal is placed so that every initial state in the context
    box can still reach it with actions in [-1, 1].
    """
    if kind not in ("linear", "nonlinear"):
        raise ValueError(f"unknown class {kind!r}")
    goal_dim = n_relevant if goal_dim is None else goal_dim
    if not 1 <= n_relevant <= dim or goal_dim > dim:
        raise ValueError(f"infeasible counts: dim={dim}, n_relevant={n_relevant}, goal_dim={goal_dim}")
    if goal_dim != n_relevant:
        raise ValueError("each goal row selects exactly one relevant state, so goal_dim must equal n_relevant")
    rng = np.random.default_rng() if rng is None else rng

    tau = tuple(int(i) for i in rng.choice(dim, size=n_relevant, replace=False))
    G = np.zeros((goal_dim, dim))
    for row, i in enumerate(tau):
        G[row, i] = 1.0

    if kind == "linear":
        perm = rng.permutation(dim)
        coef = rng.uniform(0.5, 1.5, size=dim) * rng.choice([-1.0, 1.0], size=dim)
        A = np.zeros((dim, dim))
        A[perm, np.arange(dim)] = coef
        funcs = [lambda x, a=a: a * x for a in coef]
        home_action = np.empty(dim, dtype=int)
        home_action[perm] = np.arange(dim)
    else:
        A = tuple(str(n) for n in rng.choice(sorted(FUNCTIONS), size=dim))
        funcs = [FUNCTIONS[n] for n in A]
        home_action = np.arange(dim)

    margin = 1.05 * context_halfwidth
    g_desired = np.empty(goal_dim)
    for row, i in enumerate(tau):
        f = funcs[home_action[i]]
        for _ in range(10_000):
            center = float(f(rng.uniform(-1.0, 1.0)))
            if _reachable(f, center, margin):
                break
        else:
            raise RuntimeError("could not place a reachable goal")
        g_desired[row] = center

    schema = ContextSchema(tuple(Variable(f"s{i}", -context_halfwidth, context_halfwidth, "state") for i in range(dim)))
    s0 = ContextVector(schema, rng.uniform(-context_halfwidth, context_halfwidth, size=dim))
    return MathManipInstance(dim, kind, float(noise_sigma), tau, G, A, g_desired, s0)


class MathManipEnv(Environment):
    name = "mathmanip"

    def __init__(self, instance: MathManipInstance, success_threshold: float = -SUCCESS_EPS):
        self.instance = instance
        self.schema = instance.schema
        self.param_names = tuple(f"a{j}" for j in range(instance.dim))
        self.param_lower = -np.ones(instance.dim)
        self.param_upper = np.ones(instance.dim)
        self.success_threshold = float(success_threshold)
        self.stochastic = instance.noise_sigma > 0

    def rewards(self, contexts, thetas, rng=None):
        inst = self.instance
        contexts = np.atleast_2d(contexts)
        thetas = np.atleast_2d(thetas)
        s_a = contexts + inst.delta_state(thetas)
        if inst.noise_sigma > 0:
            if rng is None:
                raise ValueError("a noisy instance needs an rng to evaluate")
            s_a = s_a + rng.normal(0.0, inst.noise_sigma, size=s_a.shape)
        g_a = s_a @ inst.G.T
        return -np.linalg.norm(g_a - inst.g_desired, axis=-1)

    def truth(self) -> StructureGraph:
        return self.instance.truth()


def mathmanip_evaluate(inst: MathManipInstance, theta: PolicyParameters | np.ndarray,
                       rng: np.random.Generator | None = None, success_threshold: float = -SUCCESS_EPS) -> TaskOutcome:
    return MathManipEnv(inst, success_threshold).evaluate(inst.s0, theta, rng)
