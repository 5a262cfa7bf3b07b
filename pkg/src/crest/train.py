"""Domain-randomized actor-critic training of context-to-parameter policies.

Each episode is a single step: the policy maps a context to controller
parameters, the environment returns a reward. Updates use a clipped
likelihood-ratio surrogate with the critic's value as baseline.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from crest.core import ContextDistribution, StructureGraph, derive_rng
from crest.environments.base import Environment
from crest.nn import (
    NetworkSpec, NetworkWeights, backward, build_policy, forward, forward_with_cache, init_weights, weights_from_json,
    weights_to_json,
)

RANDOMIZATIONS = ("full_context", "relevant_only")


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, trace: TrainTrace):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 512
    clip_ratio: float = 0.2
    learning_rate: float = 1e-3
    critic_learning_rate: float | None = None
    epochs_per_update: int = 4
    minibatch_size: int = 128
    validation_tasks: int = 50
    solve_threshold: float | None = None
    max_updates: int = 500
    normalize_advantages: bool = True
    max_grad_norm: float | None = 0.5

    def __post_init__(self) -> None:
        if self.batch_size < self.validation_tasks:
            raise ValueError("batch_size must be at least validation_tasks")
        if not 0 < self.clip_ratio < 1:
            raise ValueError("clip_ratio must lie in (0, 1)")
        if self.minibatch_size < 1 or self.epochs_per_update < 1 or self.max_updates < 0:
            raise ValueError("minibatch_size and epochs_per_update must be positive, max_updates non-negative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    def threshold(self, env: Environment) -> float:
        return env.success_threshold if self.solve_threshold is None else self.solve_threshold


@dataclass(frozen=True)
class UpdateRecord:
    update: int
    batch_reward: float
    validation_reward: float
    solved: bool


@dataclass
class TrainTrace:
    batch_size: int
    records: list[UpdateRecord] = field(default_factory=list)
    updates_to_solve: int | None = None

    @property
    def updates(self) -> int:
        """Number of gradient updates performed."""
        return max((r.update for r in self.records), default=0)

    @property
    def samples_used(self) -> int:
        return self.updates * self.batch_size

    @property
    def solved(self) -> bool:
        return self.updates_to_solve is not None

    @property
    def final_validation(self) -> float:
        return self.records[-1].validation_reward if self.records else float("nan")

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(asdict(r)) + "\n")

    def to_json(self) -> dict:
        return {"updates_to_solve": self.updates_to_solve, "updates": self.updates,
                "samples_used": self.samples_used, "final_validation": self.final_validation}


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m, self.v = np.zeros_like(params), np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad**2
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(eq=False)
class Policy:
    """Gaussian policy over normalized actions plus a state-value critic.

    Actions ``a`` map to controller parameters through
    ``theta = clip(center + halfwidth * a)``; likelihoods use the raw ``a``.
    """

    kind: str
    actor_spec: NetworkSpec
    actor: NetworkWeights
    critic_spec: NetworkSpec
    critic: NetworkWeights
    action_center: np.ndarray
    action_halfwidth: np.ndarray
    param_names: tuple[str, ...] = ()

    @property
    def d(self) -> int:
        return self.actor_spec.output_dim

    @property
    def input_indices(self) -> frozenset[int]:
        idx = {i for spec in (self.actor_spec, self.critic_spec) for h in spec.heads for i in h.input_indices}
        return frozenset(idx)

    def to_theta(self, actions: np.ndarray) -> np.ndarray:
        lo = self.action_center - self.action_halfwidth
        hi = self.action_center + self.action_halfwidth
        return np.clip(self.action_center + self.action_halfwidth * actions, lo, hi)

    def mean_action(self, contexts: np.ndarray) -> np.ndarray:
        return forward(self.actor_spec, self.actor, contexts)

    def mean_theta(self, contexts: np.ndarray) -> np.ndarray:
        return self.to_theta(self.mean_action(contexts))

    def value(self, contexts: np.ndarray) -> np.ndarray:
        return forward(self.critic_spec, self.critic, contexts)[:, 0]

    def copy(self) -> Policy:
        return Policy(self.kind, self.actor_spec, self.actor.copy(), self.critic_spec, self.critic.copy(),
                      self.action_center.copy(), self.action_halfwidth.copy(), self.param_names)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "actor": weights_to_json(self.actor_spec, self.actor),
            "critic": weights_to_json(self.critic_spec, self.critic),
            "action_center": self.action_center.tolist(),
            "action_halfwidth": self.action_halfwidth.tolist(),
            "param_names": list(self.param_names),
        }

    @classmethod
    def from_json(cls, data: dict) -> Policy:
        a_spec, actor = weights_from_json(data["actor"])
        c_spec, critic = weights_from_json(data["critic"])
        return cls(data["kind"], a_spec, actor, c_spec, critic, np.array(data["action_center"]),
                   np.array(data["action_halfwidth"]), tuple(data.get("param_names", ())))


def make_policy(kind: str, env: Environment, structure: StructureGraph | None, seed: int,
                base_hidden: int = 8) -> Policy:
    actor_spec, critic_spec = build_policy(kind, env.schema, structure, env.n_params, base_hidden)
    actor = init_weights(actor_spec, derive_rng(seed, "init", "actor"))
    critic = init_weights(critic_spec, derive_rng(seed, "init", "critic"), with_log_std=False)
    center = 0.5 * (env.param_lower + env.param_upper)
    half = 0.5 * (env.param_upper - env.param_lower)
    return Policy(kind, actor_spec, actor, critic_spec, critic, center, half, tuple(env.param_names))


def gaussian_log_prob(actions: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    z = (actions - mean) * np.exp(-log_std)
    return -0.5 * np.sum(z**2, axis=-1) - np.sum(log_std) - 0.5 * actions.shape[-1] * np.log(2 * np.pi)


def surrogate_gradient(actions: np.ndarray, mean: np.ndarray, log_std: np.ndarray, log_prob_old: np.ndarray,
                       advantages: np.ndarray, clip_ratio: float):
    """Loss and gradients of ``-mean(min(ratio * A, clip(ratio) * A))``.

    Returns ``(loss, dloss/dmean (B, d), dloss/dlog_std (d,))``.
    """
    log_prob = gaussian_log_prob(actions, mean, log_std)
    ratio = np.exp(log_prob - log_prob_old)
    clipped = np.clip(ratio, 1 - clip_ratio, 1 + clip_ratio)
    loss = -np.mean(np.minimum(ratio * advantages, clipped * advantages))
    # the clipped branch is the minimum (and flat) only outside the trust band
    active = ~(((advantages > 0) & (ratio > 1 + clip_ratio)) | ((advantages < 0) & (ratio < 1 - clip_ratio)))
    coef = -(advantages * ratio * active) / len(advantages)
    inv_var = np.exp(-2 * log_std)
    diff = actions - mean
    g_mean = coef[:, None] * diff * inv_var
    g_log_std = np.sum(coef[:, None] * (diff**2 * inv_var - 1.0), axis=0)
    return loss, g_mean, g_log_std


def _clip_norm(g: np.ndarray, max_norm: float | None) -> np.ndarray:
    if max_norm is None:
        return g
    n = np.linalg.norm(g)
    return g * (max_norm / n) if n > max_norm else g


def training_distribution(policy: Policy, env: Environment, randomization: str,
                          distribution: ContextDistribution | None = None) -> ContextDistribution:
    if randomization not in RANDOMIZATIONS:
        raise ValueError(f"randomization must be one of {RANDOMIZATIONS}")
    dist = env.default_distribution() if distribution is None else distribution
    if dist.schema != env.schema:
        raise ValueError("distribution schema differs from the environment schema")
    if randomization == "relevant_only":
        dist = dist.pin_except(policy.input_indices)
    return dist


def validation_reward(policy: Policy, env: Environment, contexts: np.ndarray, seed: int, *stream) -> np.ndarray:
    """Per-context reward of the policy mean."""
    return env.rewards(contexts, policy.mean_theta(contexts), derive_rng(seed, "validation-noise", *stream))


def _update(policy: Policy, env: Environment, contexts: np.ndarray, cfg: TrainConfig, rng: np.random.Generator,
            actor_opt: Adam, critic_opt: Adam) -> float:
    mean = policy.mean_action(contexts)
    log_std = policy.actor.log_std
    actions = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    rewards = env.rewards(contexts, policy.to_theta(actions), rng)
    adv = rewards - policy.value(contexts)
    if cfg.normalize_advantages and len(adv) > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    logp_old = gaussian_log_prob(actions, mean, log_std)

    n = len(contexts)
    for _ in range(cfg.epochs_per_update):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            mb = perm[start:start + cfg.minibatch_size]
            ctx = contexts[mb]
            mu, cache = forward_with_cache(policy.actor_spec, policy.actor, ctx)
            _, g_mu, g_ls = surrogate_gradient(actions[mb], mu, policy.actor.log_std, logp_old[mb], adv[mb],
                                               cfg.clip_ratio)
            grads = backward(policy.actor_spec, policy.actor, ctx, g_mu, cache)
            grads.log_std = g_ls
            flat = _clip_norm(grads.flat(), cfg.max_grad_norm)
            policy.actor = policy.actor.with_flat(actor_opt.step(policy.actor.flat(), flat))

            v, vcache = forward_with_cache(policy.critic_spec, policy.critic, ctx)
            g_v = (v[:, 0] - rewards[mb])[:, None] / len(mb)
            cgrads = backward(policy.critic_spec, policy.critic, ctx, g_v, vcache)
            cflat = _clip_norm(cgrads.flat(), cfg.max_grad_norm)
            policy.critic = policy.critic.with_flat(critic_opt.step(policy.critic.flat(), cflat))
    return float(rewards.mean())


def pretrain(policy: Policy, env: Environment, randomization: str = "full_context", cfg: TrainConfig = TrainConfig(),
             seed: int = 0, distribution: ContextDistribution | None = None,
             trace_path: str | Path | None = None, validation_contexts: np.ndarray | None = None) -> TrainTrace:
    """Train ``policy`` in place until the validation mean reaches the solve threshold.

    The criterion is checked before the first update and after every update.
    """
    dist = training_distribution(policy, env, randomization, distribution)
    if validation_contexts is None:
        validation_contexts = dist.sample(cfg.validation_tasks, seed, "validation")
    threshold = cfg.threshold(env)
    actor_opt = Adam(cfg.learning_rate)
    critic_opt = Adam(cfg.critic_learning_rate or cfg.learning_rate)
    trace = TrainTrace(cfg.batch_size)
    batch_reward = float("nan")
    for u in range(cfg.max_updates + 1):
        if u > 0:
            contexts = dist.sample(cfg.batch_size, seed, "train", u)
            batch_reward = _update(policy, env, contexts, cfg, derive_rng(seed, "update", u), actor_opt, critic_opt)
        val = float(np.mean(validation_reward(policy, env, validation_contexts, seed, u)))
        solved = bool(val >= threshold)
        trace.records.append(UpdateRecord(u, batch_reward, val, solved))
        if not np.isfinite(val):
            if trace_path is not None:
                trace.write_jsonl(trace_path)
            raise TrainingDiverged(f"validation reward became {val} at update {u}", trace)
        if solved:
            trace.updates_to_solve = u
            break
    if trace_path is not None:
        trace.write_jsonl(trace_path)
    return trace


def transfer_and_finetune(policy: Policy, env_target: Environment, cfg: TrainConfig = TrainConfig(), seed: int = 0,
                          distribution: ContextDistribution | None = None, randomization: str = "full_context",
                          trace_path: str | Path | None = None) -> tuple[bool, TrainTrace]:
    """Evaluate ``policy`` zero-shot on the target, then fine-tune it in place.

    No layers are frozen. Zero-shot means solved before any target update.
    """
    n_in = policy.actor_spec.n_inputs
    if n_in != env_target.schema.dimension or policy.d != env_target.n_params:
        raise ValueError(f"policy expects {n_in} context variables and {policy.d} parameters; target has "
                         f"{env_target.schema.dimension} and {env_target.n_params}")
    trace = pretrain(policy, env_target, randomization, cfg, seed, distribution, trace_path)
    return trace.updates_to_solve == 0, trace


@dataclass(frozen=True)
class RegressionResult:
    weights: NetworkWeights
    rmse: float
    rmse_per_param: np.ndarray


def supervised_pretrain_oracle(policy: Policy, env: Environment, n: int, seed: int = 0,
                               distribution: ContextDistribution | None = None, max_iter: int = 5000,
                               contexts: np.ndarray | None = None) -> RegressionResult:
    """Least-squares fit of the policy mean to the closed-form optimum.

    Updates ``policy.actor`` in place; the RMSE is in parameter units.
    """
    if not env.has_oracle():
        raise ValueError(f"{env.name} has no closed-form optimum to regress onto")
    if contexts is None:
        dist = env.default_distribution() if distribution is None else distribution
        contexts = dist.sample(n, seed, "regression")
    target = (env.optimal(contexts) - policy.action_center) / policy.action_halfwidth
    spec, start = policy.actor_spec, policy.actor
    log_std = start.log_std.copy()
    net_size = start.size - log_std.size

    def loss(vec):
        w = start.with_flat(np.concatenate([vec, log_std]))
        out, cache = forward_with_cache(spec, w, contexts)
        err = out - target
        g = backward(spec, w, contexts, err / len(contexts), cache)
        return 0.5 * np.mean(np.sum(err**2, axis=1)), g.flat()[:net_size]

    res = minimize(loss, start.flat()[:net_size], jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "ftol": 0.0, "gtol": 1e-12})
    policy.actor = start.with_flat(np.concatenate([res.x, log_std]))
    err = policy.mean_theta(contexts) - env.optimal(contexts)
    per = np.sqrt(np.mean(err**2, axis=0))
    return RegressionResult(policy.actor, float(np.sqrt(np.mean(err**2))), per)
