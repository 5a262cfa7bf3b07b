"""Episodic relative entropy policy search for a single fixed context.

The search distribution is a Gaussian over controller parameters. Each
iteration samples parameters, weights them by exponentiated reward with a
temperature chosen through the dual of the KL-bounded update, and refits the
Gaussian by weighted maximum likelihood.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp

from crest.core import ContextVector
from crest.environments.base import Environment

COV_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class GaussianSearchState:
    mean: np.ndarray
    covariance: np.ndarray
    kl_bound: float = 0.5
    temperature: float = float("inf")

    def __post_init__(self) -> None:
        if not self.kl_bound > 0:
            raise ValueError("kl_bound must be positive")
        cov = np.asarray(self.covariance, dtype=float)
        cov = 0.5 * (cov + cov.T)
        w, v = np.linalg.eigh(cov)
        if np.any(w < COV_FLOOR):
            cov = (v * np.maximum(w, COV_FLOOR)) @ v.T
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).copy())
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.multivariate_normal(self.mean, self.covariance, size=n, method="cholesky")


def reps_dual(eta: float, rewards: np.ndarray, kl_bound: float) -> float:
    """g(eta) = eta * eps + eta * log mean exp((r - max r) / eta)."""
    adv = rewards - rewards.max()
    return eta * kl_bound + eta * (logsumexp(adv / eta) - np.log(len(rewards)))


def reps_temperature(rewards: np.ndarray, kl_bound: float) -> float:
    """Minimise the dual over eta > 0; ``inf`` when the rewards are all equal."""
    rewards = np.asarray(rewards, dtype=float)
    spread = rewards.max() - rewards.min()
    if not spread > 0:
        return float("inf")
    # g(eta; r) = spread * g(eta / spread; r / spread), so search on unit-spread rewards;
    # the dual is convex in eta, hence unimodal in log(eta)
    unit = (rewards - rewards.max()) / spread
    res = minimize_scalar(lambda x: reps_dual(np.exp(x), unit, kl_bound), bounds=(-25.0, 25.0),
                          method="bounded", options={"xatol": 1e-10})
    eta = float(spread * np.exp(res.x))
    # a spread below float resolution cannot be resolved into weights
    return eta if eta > 0 and np.isfinite(eta) else float("inf")


def reps_weights(rewards: np.ndarray, eta: float) -> np.ndarray:
    rewards = np.asarray(rewards, dtype=float)
    if not np.isfinite(eta):
        return np.full(len(rewards), 1.0 / len(rewards))
    logw = (rewards - rewards.max()) / eta
    w = np.exp(logw - logsumexp(logw))
    return w


def empirical_kl(weights: np.ndarray) -> float:
    """KL between the reweighted and the uniform sample distributions."""
    w = weights[weights > 0]
    return float(np.sum(w * np.log(len(weights) * w)))


def weighted_fit(thetas: np.ndarray, weights: np.ndarray, diagonal: bool = True) -> tuple[np.ndarray, np.ndarray]:
    mean = weights @ thetas
    diff = thetas - mean
    if diagonal:
        cov = np.diag(weights @ diff**2)
    else:
        cov = (weights[:, None] * diff).T @ diff
    return mean, cov


def reps_update(state: GaussianSearchState, thetas: np.ndarray, rewards: np.ndarray,
                diagonal: bool = True) -> GaussianSearchState:
    thetas = np.asarray(thetas, dtype=float)
    rewards = np.asarray(rewards, dtype=float)
    if thetas.shape[0] < state.dim + 2:
        raise ValueError(f"need at least {state.dim + 2} samples, got {thetas.shape[0]}")
    eta = reps_temperature(rewards, state.kl_bound)
    w = reps_weights(rewards, eta)
    mean, cov = weighted_fit(thetas, w, diagonal)
    return GaussianSearchState(mean, cov, state.kl_bound, eta)


@dataclass(frozen=True)
class SolverConfig:
    kl_bound: float = 0.5
    samples_per_iteration: int = 64
    init_std_fraction: float = 0.1
    warm_start_shrink: float = 0.25
    diagonal: bool = True
    restart_std_fraction: float = 1e-3


@dataclass
class SolveResult:
    theta: np.ndarray
    solved: bool
    evals_used: int
    best_reward: float
    trace: list[tuple[int, float, float]] = field(default_factory=list)

    def __iter__(self):
        # unpacks as (theta, solved, evals_used)
        return iter((self.theta, self.solved, self.evals_used))

    def write_trace(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "best_reward", "eta"])
            writer.writerows(self.trace)


def solve_context(env: Environment, c: ContextVector | np.ndarray, theta_init: np.ndarray | None = None,
                  budget: int = 5000, rng: np.random.Generator | None = None,
                  config: SolverConfig = SolverConfig(), target: float | None = None) -> SolveResult:
    """Search for parameters that solve ``env`` at the fixed context ``c``.

    Returns the first sample whose reward reaches ``target`` (the environment
    success threshold by default), or the best sample at budget exhaustion.
    A warm start evaluates ``theta_init`` first and searches around it with a
    shrunk covariance.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    rng = np.random.default_rng(0) if rng is None else rng
    target = env.success_threshold if target is None else target
    cv = c.values if isinstance(c, ContextVector) else np.asarray(c, dtype=float)
    lo, hi = env.param_lower, env.param_upper
    init_var = (config.init_std_fraction * (hi - lo)) ** 2
    evals = 0
    trace: list[tuple[int, float, float]] = []

    if theta_init is not None:
        theta_init = np.clip(np.asarray(theta_init, dtype=float), lo, hi)
        r0 = float(env.rewards(cv[None], theta_init[None], rng)[0])
        evals = 1
        best_theta, best_r = theta_init, r0
        if r0 >= target:
            return SolveResult(theta_init, True, evals, r0, [(0, r0, float("inf"))])
        init_var = init_var * config.warm_start_shrink
        mean = theta_init
    else:
        best_theta, best_r = 0.5 * (lo + hi), -np.inf
        mean = best_theta

    state = GaussianSearchState(mean, np.diag(init_var), config.kl_bound)
    restart_var = (config.restart_std_fraction * (hi - lo)) ** 2
    it = 0
    while evals < budget:
        it += 1
        k = min(config.samples_per_iteration, budget - evals)
        thetas = np.clip(state.sample(k, rng), lo, hi)
        rewards = env.rewards(cv[None], thetas, rng)
        evals += k
        hits = np.flatnonzero(rewards >= target)
        if hits.size:
            i = hits[0]
            trace.append((it, float(max(best_r, rewards.max())), state.temperature))
            return SolveResult(thetas[i], True, evals, float(rewards[i]), trace)
        i = int(np.argmax(rewards))
        if rewards[i] > best_r:
            best_theta, best_r = thetas[i], float(rewards[i])
        if k < state.dim + 2:
            break
        state = reps_update(state, thetas, rewards, config.diagonal)
        trace.append((it, best_r, state.temperature))
        if np.all(np.diag(state.covariance) < restart_var):
            state = GaussianSearchState(best_theta, np.diag(init_var), config.kl_bound)
    return SolveResult(best_theta, False, evals, best_r, trace)


def with_overrides(config: SolverConfig, **kwargs) -> SolverConfig:
    return replace(config, **kwargs)
