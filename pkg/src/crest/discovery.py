"""Two-phase interventional discovery of relevant context variables.

Phase 1 solves a few sampled contexts and perturbs one context variable at a
time while keeping the solved parameters fixed. A variable is relevant when
some perturbation makes the execution fail.

Phase 2 re-solves each perturbed context from the original parameters and
looks for the smallest set of parameter indices whose change alone restores
success. Those parameters become children of the perturbed variable.

Every random draw comes from a stream keyed by (seed, context, variable,
repetition), so results do not depend on evaluation order or parallelism.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from crest.core import StructureGraph, derive_rng
from crest.environments.base import Environment
from crest.solver import SolverConfig, solve_context

SAMPLERS = ("uniform", "extreme")


class DiscoveryError(RuntimeError):
    pass


@dataclass(frozen=True)
class DiscoveryConfig:
    n_contexts: int = 3
    interventions_per_variable: int = 2
    intervention_sampler: str = "uniform"
    solver_budget: int = 5000
    subset_search_cap: int | None = None
    evaluations_per_test: int = 1
    # solves aim for margin * threshold so that mixing base and re-solved
    # parameter components cannot exceed the threshold through slack alone
    solve_margin: float = 0.25
    max_base_attempts: int = 10
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self) -> None:
        for name in ("n_contexts", "interventions_per_variable", "solver_budget", "evaluations_per_test",
                     "max_base_attempts"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.subset_search_cap is not None and self.subset_search_cap < 0:
            raise ValueError("subset_search_cap must be non-negative")
        if self.intervention_sampler not in SAMPLERS:
            raise ValueError(f"intervention_sampler must be one of {SAMPLERS}")
        if not 0 < self.solve_margin <= 1:
            raise ValueError("solve_margin must lie in (0, 1]")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> DiscoveryConfig:
        data = dict(data)
        solver = SolverConfig(**data.pop("solver", {}))
        return cls(solver=solver, **data)


@dataclass(frozen=True)
class DiscoveryMetrics:
    agg_accuracy: float
    agg_false_positive: float
    map_accuracy: float
    map_false_positive: float

    def __post_init__(self) -> None:
        for k, v in asdict(self).items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{k}={v} outside [0, 1]")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.agg_accuracy, self.agg_false_positive, self.map_accuracy, self.map_false_positive)


@dataclass(frozen=True)
class BaseSolution:
    index: int
    context: np.ndarray
    theta: np.ndarray


@dataclass(frozen=True)
class InterventionRecord:
    context_index: int
    variable: int
    repetition: int
    value: float
    failed: bool


@dataclass
class DiscoveryResult:
    structure: StructureGraph
    base: list[BaseSolution]
    interventions: list[InterventionRecord]
    subsets: dict[tuple[int, int, int], tuple[int, ...]]
    inconclusive: int
    evaluations: int
    seed: int
    config: DiscoveryConfig

    def to_json(self, env: Environment, truth: StructureGraph | None = None) -> dict:
        out = self.structure.to_json(env.schema, env.param_names)
        if truth is not None:
            out["metrics"] = asdict(score_discovery(self.structure, truth))
        out["config"] = self.config.to_json()
        out["seeds"] = [self.seed]
        out["inconclusive"] = self.inconclusive
        out["evaluations"] = self.evaluations
        return out

    def dumps(self, env: Environment, truth: StructureGraph | None = None) -> str:
        return json.dumps(self.to_json(env, truth), indent=2)


def _target(env: Environment, cfg: DiscoveryConfig) -> float:
    return cfg.solve_margin * env.success_threshold


def _passes(env: Environment, context: np.ndarray, theta: np.ndarray, cfg: DiscoveryConfig,
            rng: np.random.Generator) -> bool:
    ctx = np.broadcast_to(context, (cfg.evaluations_per_test, context.shape[0]))
    th = np.broadcast_to(theta, (cfg.evaluations_per_test, theta.shape[0]))
    return bool(env.is_success(env.rewards(ctx, th, rng).mean()))


def intervention_value(env: Environment, context: np.ndarray, variable: int, repetition: int,
                       sampler: str, rng: np.random.Generator) -> float:
    var = env.schema.variables[variable]
    if sampler == "extreme":
        return var.lower if repetition % 2 == 0 else var.upper
    return float(rng.uniform(var.lower, var.upper))


def solve_base_contexts(env: Environment, cfg: DiscoveryConfig, seed: int) -> tuple[list[BaseSolution], int]:
    """Sample and solve ``n_contexts`` contexts, resampling failures."""
    dist = env.default_distribution()
    base, evals = [], 0
    for i in range(cfg.n_contexts):
        for attempt in range(cfg.max_base_attempts):
            c = dist.sample(1, seed, "base", i, attempt)[0]
            res = solve_context(env, c, None, cfg.solver_budget, derive_rng(seed, "solve", i, attempt),
                                cfg.solver, target=_target(env, cfg))
            evals += res.evals_used
            if res.solved:
                base.append(BaseSolution(i, c, res.theta))
                break
        else:
            raise DiscoveryError(
                f"{env.name}: no solution for base context {i} after {cfg.max_base_attempts} attempts "
                f"with budget {cfg.solver_budget}; best reward {res.best_reward:.4g}"
            )
    return base, evals


def phase1_relevant_set(env: Environment, cfg: DiscoveryConfig, seed: int,
                        base: list[BaseSolution] | None = None):
    """Relevant set from single-variable interventions on solved contexts.

    Returns ``(relevant, base, records, evaluations)``.
    """
    evals = 0
    if base is None:
        base, evals = solve_base_contexts(env, cfg, seed)
    relevant: set[int] = set()
    records: list[InterventionRecord] = []
    for b in base:
        for k in range(env.schema.dimension):
            for r in range(cfg.interventions_per_variable):
                value = intervention_value(env, b.context, k, r, cfg.intervention_sampler,
                                           derive_rng(seed, "value", b.index, k, r))
                c2 = b.context.copy()
                c2[k] = value
                ok = _passes(env, c2, b.theta, cfg, derive_rng(seed, "test", b.index, k, r))
                evals += cfg.evaluations_per_test
                records.append(InterventionRecord(b.index, k, r, value, not ok))
                if not ok:
                    relevant.add(k)
    return frozenset(relevant), base, records, evals


def minimal_change_subset(succeeds: Callable[[np.ndarray], bool], theta_base: np.ndarray, theta_new: np.ndarray,
                          cap: int | None = None) -> tuple[int, ...] | None:
    """Smallest index set S such that applying only the changes in S succeeds.

    Subsets are visited by increasing size and lexicographically within a
    size; ``None`` when no subset up to ``cap`` succeeds.
    """
    theta_base = np.asarray(theta_base, dtype=float)
    delta = np.asarray(theta_new, dtype=float) - theta_base
    d = delta.shape[0]
    cap = d if cap is None else min(cap, d)
    for size in range(cap + 1):
        for subset in itertools.combinations(range(d), size):
            if any(delta[j] == 0.0 for j in subset):
                # equivalent to a smaller subset that was already rejected
                continue
            trial = theta_base.copy()
            trial[list(subset)] += delta[list(subset)]
            if succeeds(trial):
                return subset
    return None


def phase2_mappings(env: Environment, base: list[BaseSolution], relevant: Iterable[int], cfg: DiscoveryConfig,
                    seed: int, records: Sequence[InterventionRecord] | None = None):
    """Parent sets from minimal parameter changes after each intervention.

    Reuses the phase-1 intervention values when ``records`` is given.
    Returns ``(structure, subsets, inconclusive, evaluations)``.
    """
    relevant = frozenset(relevant)
    d = env.n_params
    parents: list[set[int]] = [set() for _ in range(d)]
    subsets: dict[tuple[int, int, int], tuple[int, ...]] = {}
    values = {(rec.context_index, rec.variable, rec.repetition): rec.value for rec in records or ()}
    inconclusive = evals = 0
    for b in base:
        for k in sorted(relevant):
            for r in range(cfg.interventions_per_variable):
                key = (b.index, k, r)
                value = values.get(key)
                if value is None:
                    value = intervention_value(env, b.context, k, r, cfg.intervention_sampler,
                                               derive_rng(seed, "value", b.index, k, r))
                c2 = b.context.copy()
                c2[k] = value
                res = solve_context(env, c2, b.theta, cfg.solver_budget, derive_rng(seed, "resolve", *key),
                                    cfg.solver, target=_target(env, cfg))
                evals += res.evals_used
                if not res.solved:
                    inconclusive += 1
                    continue
                counter = itertools.count()

                def succeeds(theta, key=key, c2=c2):
                    return _passes(env, c2, theta, cfg, derive_rng(seed, "subset", *key, next(counter)))

                subset = minimal_change_subset(succeeds, b.theta, res.theta, cfg.subset_search_cap)
                evals += next(counter) * cfg.evaluations_per_test
                if subset is None:
                    subset = tuple(int(j) for j in np.flatnonzero(res.theta != b.theta))
                subsets[key] = subset
                for j in subset:
                    parents[j].add(k)
    structure = StructureGraph(relevant, tuple(frozenset(p) for p in parents), env.schema.dimension)
    return structure, subsets, inconclusive, evals


def discover(env: Environment, cfg: DiscoveryConfig = DiscoveryConfig(), seed: int = 0) -> DiscoveryResult:
    relevant, base, records, e1 = phase1_relevant_set(env, cfg, seed)
    structure, subsets, inconclusive, e2 = phase2_mappings(env, base, relevant, cfg, seed, records)
    return DiscoveryResult(structure, base, records, subsets, inconclusive, e1 + e2, seed, cfg)


def score_discovery(found: StructureGraph, truth: StructureGraph) -> DiscoveryMetrics:
    """Single-trial accuracy and false-positive rates.

    Aggregate accuracy is 1 when every truly relevant variable was found;
    aggregate false positives are the fraction of truly irrelevant variables
    reported relevant. The mapping metrics apply the same definitions to
    (parameter, variable) pairs: the fraction of true pairs found and the
    fraction of non-pairs reported.
    """
    if found.n_context != truth.n_context or found.n_params != truth.n_params:
        raise ValueError("structures disagree on context or parameter dimension")
    n, d = truth.n_context, truth.n_params
    agg_acc = float(truth.relevant <= found.relevant)
    n_irr = n - len(truth.relevant)
    agg_fp = len(found.relevant - truth.relevant) / n_irr if n_irr else 0.0
    tp, fp = truth.pairs(), found.pairs()
    map_acc = len(tp & fp) / len(tp) if tp else 1.0
    n_non = n * d - len(tp)
    map_fp = len(fp - tp) / n_non if n_non else 0.0
    return DiscoveryMetrics(agg_acc, agg_fp, map_acc, map_fp)


def mean_metrics(metrics: Sequence[DiscoveryMetrics]) -> DiscoveryMetrics:
    if not metrics:
        raise ValueError("no metrics to average")
    arr = np.array([m.as_tuple() for m in metrics])
    return DiscoveryMetrics(*(float(x) for x in arr.mean(axis=0)))
