"""Experiment suites: discovery accuracy, scaling, distribution shifts.

Each suite splits into independent seeded units that may run in parallel
processes; units return plain records so results do not depend on ``jobs``.
"""

from __future__ import annotations

import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable

import numpy as np

from crest.core import StructureGraph, derive_rng, derive_seed
from crest.discovery import DiscoveryError, DiscoveryMetrics, discover, mean_metrics, score_discovery
from crest.environments import MathManipEnv, color_half_distribution, mathmanip_generate
from crest.environments.base import Environment
from crest.environments.mathmanip import SUCCESS_EPS
from crest.experiments.config import ExperimentConfig, make_env, noise_value
from crest.experiments.records import RunRecord
from crest.nn import count_params
from crest.train import Policy, TrainTrace, make_policy, pretrain, transfer_and_finetune, validation_reward

MAX_SOLVER_FAILURE = 0.2


def parallel_map(fn: Callable, items: Iterable, jobs: int = 1) -> list:
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, *zip(*items)))


def randomization_for(kind: str) -> str:
    return "full_context" if kind == "MLP" else "relevant_only"


def _trace_summary(trace: TrainTrace, max_updates: int) -> dict:
    return {
        **trace.to_json(),
        "updates_censored": trace.updates_to_solve if trace.solved else max_updates,
        "k_samples": trace.samples_used / 1000.0,
        "validation": [r.validation_reward for r in trace.records],
    }


def _structure_metrics(env: Environment, structure: StructureGraph) -> dict:
    truth = env.truth()
    return {} if truth is None else vars(score_discovery(structure, truth))


def _discover(cfg: ExperimentConfig, env: Environment, seed: int):
    res = discover(env, cfg.discovery_config(), derive_seed(seed, "discover"))
    return res.structure, res


# --- Table 1 -------------------------------------------------------------------------------------------------


def _table1_trial(cfg_json: dict, row: dict, trial: int) -> dict:
    cfg = ExperimentConfig.from_json(cfg_json)
    seed = derive_seed(cfg.seeds[0], "table1", row["class"], row["dim"], row["noise"], trial)
    dim = int(row["dim"])
    n_relevant = int(row.get("n_relevant", dim // 2))
    inst = mathmanip_generate(dim, row["class"], noise_value(row["noise"]), n_relevant,
                              rng=derive_rng(seed, "instance"))
    eps = cfg.environment.get("thresholds", {}).get("internal", -SUCCESS_EPS)
    env = MathManipEnv(inst, success_threshold=eps)
    res = discover(env, cfg.discovery_config(), seed)
    m = score_discovery(res.structure, inst.truth())
    return {"metrics": vars(m), "inconclusive": res.inconclusive, "resolves": res.inconclusive + len(res.subsets),
            "seed": seed, "structure": res.structure.to_json(env.schema, env.param_names)}


def run_table1(cfg: ExperimentConfig, jobs: int = 1) -> tuple[list[dict], list[RunRecord]]:
    """Discovery accuracy on freshly generated goal-reaching instances, one row per setting."""
    rows, records = [], []
    cfg_json = cfg.to_json()
    for row in cfg.options.get("rows", []):
        t0 = time.time()
        trials = parallel_map(_table1_trial, [(cfg_json, row, t) for t in range(cfg.trials)], jobs)
        resolves = sum(t["resolves"] for t in trials)
        failures = sum(t["inconclusive"] for t in trials)
        rate = failures / resolves if resolves else 0.0
        if rate > MAX_SOLVER_FAILURE:
            raise DiscoveryError(f"row {row}: {failures}/{resolves} re-solves failed ({rate:.0%})")
        mean = mean_metrics([DiscoveryMetrics(**t["metrics"]) for t in trials])
        rows.append({"class": row["class"], "dim": row["dim"], "noise": row["noise"], "trials": cfg.trials,
                     **vars(mean), "resolve_failure_rate": rate})
        for t in trials:
            records.append(RunRecord("table1", cfg.hash(), t["seed"], dict(row), t["structure"], t["metrics"],
                                     {"inconclusive": t["inconclusive"]}, (time.time() - t0) / len(trials)))
    return rows, records


# --- policy training helpers ---------------------------------------------------------------------------------


def train_and_transfer(cfg: ExperimentConfig, kind: str, env: Environment, targets: dict[str, tuple],
                       structure: StructureGraph | None, seed: int, pretrain_distribution=None,
                       labels: dict | None = None) -> list[RunRecord]:
    """Pretrain one architecture, then transfer a copy to each named target.

    ``targets`` maps a label to ``(target_env, target_distribution)``.
    """
    t0 = time.time()
    train_cfg = cfg.train_config()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        policy = make_policy(kind, env, structure, derive_seed(seed, "policy", kind))
    pre = pretrain(policy, env, randomization_for(kind), train_cfg, derive_seed(seed, "pretrain"),
                   pretrain_distribution)
    pre_summary = _trace_summary(pre, train_cfg.max_updates)
    pre_time = (time.time() - t0) / max(len(targets), 1)
    out = []
    for name, (target, dist) in targets.items():
        t1 = time.time()
        tuned = policy.copy()
        tseed = derive_seed(seed, "transfer")
        val_contexts = (dist or target.default_distribution()).sample(train_cfg.validation_tasks, tseed, "validation")
        zero_rewards = validation_reward(tuned, target, val_contexts, tseed, 0)
        zero_shot, fine = transfer_and_finetune(tuned, target, train_cfg, tseed, dist, randomization_for(kind))
        fine_summary = _trace_summary(fine, train_cfg.max_updates)
        metrics = {
            "pretrain_updates": pre_summary["updates_censored"],
            "pretrain_solved": pre.solved,
            "zero_shot": zero_shot,
            "finetune_updates": fine_summary["updates_censored"],
            "finetune_solved": fine.solved,
            "zero_shot_rewards": zero_rewards.tolist(),
            "actor_params": count_params(policy.actor_spec, log_std=True),
            "critic_params": count_params(policy.critic_spec),
            "input_dim": len(policy.input_indices),
        }
        rec_labels = {"architecture": kind, "target": name, **(labels or {})}
        structure_json = None if structure is None else structure.to_json(env.schema, env.param_names)
        out.append(RunRecord(cfg.experiment, cfg.hash(), seed, rec_labels, structure_json, metrics,
                             {"pretrain": pre_summary, "finetune": fine_summary},
                             pre_time + time.time() - t1))
    return out


def _needs_structure(cfg: ExperimentConfig) -> bool:
    return any(k != "MLP" for k in cfg.architectures)


def _discovered(cfg: ExperimentConfig, env: Environment, seed: int) -> tuple[StructureGraph | None, dict]:
    if not _needs_structure(cfg):
        return None, {}
    structure, res = _discover(cfg, env, seed)
    return structure, {"structure_metrics": _structure_metrics(env, structure), "inconclusive": res.inconclusive}


# --- block stacking scaling ----------------------------------------------------------------------------------


def _scaling_unit(cfg_json: dict, n_blocks: int, seed: int) -> list[dict]:
    cfg = ExperimentConfig.from_json(cfg_json)
    env = make_env(cfg.environment, n_blocks=n_blocks)
    target = make_env(cfg.environment, target=True, n_blocks=n_blocks)
    structure, extra = _discovered(cfg, env, derive_seed(seed, "blocks", n_blocks))
    out = []
    for kind in cfg.architectures:
        for rec in train_and_transfer(cfg, kind, env, {"target": (target, None)}, structure if kind != "MLP" else None,
                                      seed, labels={"n_blocks": n_blocks}):
            if kind != "MLP":
                rec.metrics.update(extra)
            out.append(rec.to_json())
    return out


def run_blocks_scaling(cfg: ExperimentConfig, jobs: int = 1) -> list[RunRecord]:
    units = [(cfg.to_json(), n, s) for n in cfg.options.get("n_blocks", [2, 6, 10, 14, 18]) for s in cfg.seeds]
    return [RunRecord.from_json(r) for batch in parallel_map(_scaling_unit, units, jobs) for r in batch]


# --- irrelevant (color) shift --------------------------------------------------------------------------------


def _color_shift_unit(cfg_json: dict, seed: int) -> list[dict]:
    cfg = ExperimentConfig.from_json(cfg_json)
    env = make_env(cfg.environment)
    target = make_env(cfg.environment, target=True)
    base = target.default_distribution()
    pre_dist = color_half_distribution(env.default_distribution(), "lower")
    targets = {"no_shift": (target, color_half_distribution(base, "lower")),
               "shift": (target, color_half_distribution(base, "upper"))}
    structure, extra = _discovered(cfg, env, seed)
    out = []
    for kind in cfg.architectures:
        for rec in train_and_transfer(cfg, kind, env, targets, structure if kind != "MLP" else None, seed, pre_dist):
            if kind != "MLP":
                rec.metrics.update(extra)
            out.append(rec.to_json())
    return out


def run_color_shift(cfg: ExperimentConfig, jobs: int = 1) -> list[RunRecord]:
    """Pretrain on one half of color space; transfer to the same and to the opposite half."""
    batches = parallel_map(_color_shift_unit, [(cfg.to_json(), s) for s in cfg.seeds], jobs)
    return [RunRecord.from_json(r) for batch in batches for r in batch]


# --- crate stiffness -----------------------------------------------------------------------------------------


def _stiffness_unit(cfg_json: dict, seed: int) -> list[dict]:
    cfg = ExperimentConfig.from_json(cfg_json)
    env = make_env(cfg.environment)
    levels = cfg.options.get("stiffness", ["light", "nominal", "stiff"])
    targets = {str(lvl): (make_env(cfg.environment, target=True, stiffness=lvl), None) for lvl in levels}
    structure, extra = _discovered(cfg, env, seed)
    out = []
    for kind in cfg.architectures:
        for rec in train_and_transfer(cfg, kind, env, targets, structure if kind != "MLP" else None, seed):
            rec.labels["stiffness"] = rec.labels["target"]
            if kind != "MLP":
                rec.metrics.update(extra)
            out.append(rec.to_json())
    return out


def run_crate_stiffness(cfg: ExperimentConfig, jobs: int = 1) -> list[RunRecord]:
    """Fine-tuning cost after transfer to increasingly stiff crates."""
    batches = parallel_map(_stiffness_unit, [(cfg.to_json(), s) for s in cfg.seeds], jobs)
    return [RunRecord.from_json(r) for batch in batches for r in batch]


# --- discovery only ------------------------------------------------------------------------------------------


def _discover_unit(cfg_json: dict, seed: int) -> dict:
    cfg = ExperimentConfig.from_json(cfg_json)
    t0 = time.time()
    env = make_env(cfg.environment)
    structure, res = _discover(cfg, env, seed)
    rec = RunRecord(cfg.experiment, cfg.hash(), seed, {"env": env.name}, structure.to_json(env.schema, env.param_names),
                    {**_structure_metrics(env, structure), "inconclusive": res.inconclusive,
                     "evaluations": res.evaluations}, {}, time.time() - t0)
    return rec.to_json()


def run_discovery(cfg: ExperimentConfig, jobs: int = 1) -> list[RunRecord]:
    return [RunRecord.from_json(r) for r in parallel_map(_discover_unit, [(cfg.to_json(), s) for s in cfg.seeds], jobs)]


def run_pretrain(cfg: ExperimentConfig, seed: int) -> dict[str, tuple[Policy, TrainTrace, StructureGraph | None]]:
    """Pretrain every configured architecture on the internal model."""
    env = make_env(cfg.environment)
    structure, _ = _discovered(cfg, env, seed)
    out = {}
    for kind in cfg.architectures:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            policy = make_policy(kind, env, structure if kind != "MLP" else None, derive_seed(seed, "policy", kind))
        trace = pretrain(policy, env, randomization_for(kind), cfg.train_config(), derive_seed(seed, "pretrain"))
        out[kind] = (policy, trace, structure)
    return out


def zero_shot_rates(records: list[RunRecord], kind: str, target: str) -> float:
    sel = [r.metrics["zero_shot"] for r in records if r.labels["architecture"] == kind and r.labels["target"] == target]
    return float(np.mean(sel)) if sel else float("nan")
