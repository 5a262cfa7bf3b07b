"""Experiment configuration: JSON in, environments and typed configs out."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from crest.discovery import DiscoveryConfig
from crest.environments import (
    NOISE_LEVELS, STIFFNESS_LEVELS, BlocksEnv, CrateEnv, Environment, TargetShiftConfig, blocks_target_env,
)
from crest.solver import SolverConfig
from crest.train import TrainConfig

EXPERIMENTS = ("table1", "blocks_scaling", "blocks_color_shift", "crate_nominal", "crate_stiffness",
               "crate_color_shift", "discover_only", "pretrain")
ENVIRONMENTS = ("blocks", "crate", "mathmanip")

TABLE1_ROWS = [
    {"class": kind, "dim": dim, "noise": noise}
    for noise in ("none", "limited") for dim in (8, 20) for kind in ("linear", "nonlinear")
]


@dataclass
class ExperimentConfig:
    experiment: str
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    trials: int = 10
    environment: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    discovery: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    architectures: list[str] = field(default_factory=lambda: ["MLP", "RMLP", "PMLP"])
    options: dict = field(default_factory=dict)
    output: str = "results"

    def __post_init__(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        env = self.environment.get("env")
        if env is not None and env not in ENVIRONMENTS:
            raise ValueError(f"unknown environment {env!r}")
        # fail early on malformed blocks
        self.solver_config()
        self.discovery_config()
        self.train_config()

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> ExperimentConfig:
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> ExperimentConfig:
        with open(path) as fh:
            return cls.from_json(json.load(fh))

    def dump(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)

    def hash(self) -> str:
        """Digest of everything except the output location."""
        data = self.to_json()
        data.pop("output")
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()[:16]

    def with_updates(self, **kwargs) -> ExperimentConfig:
        data = copy.deepcopy(self.to_json())
        data.update(kwargs)
        return ExperimentConfig.from_json(data)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(**self.solver)

    def discovery_config(self) -> DiscoveryConfig:
        return DiscoveryConfig(solver=self.solver_config(), **self.discovery)

    def train_config(self, **overrides) -> TrainConfig:
        return TrainConfig(**{**self.train, **overrides})


def stiffness_value(level: str | float) -> float:
    return STIFFNESS_LEVELS[level] if isinstance(level, str) else float(level)


def noise_value(level: str | float) -> float:
    return NOISE_LEVELS[level] if isinstance(level, str) else float(level)


def make_env(block: dict, target: bool = False, **overrides) -> Environment:
    """Internal model, or its target proxy, from an environment block."""
    block = {**block, **overrides}
    kind = block.get("env", "blocks")
    thresholds = block.get("thresholds", {})
    if kind == "blocks":
        n_blocks = int(block.get("n_blocks", 2))
        kwargs = {"bounds": block.get("bounds"), "discrete_heights": block.get("discrete_heights", False)}
        if not target:
            return BlocksEnv(n_blocks, success_threshold=thresholds.get("internal", -0.01), **kwargs)
        shift = TargetShiftConfig(exec_noise=block.get("exec_noise", 0.005),
                                  success_threshold=thresholds.get("target", -0.025))
        return blocks_target_env(n_blocks, shift, **kwargs)
    if kind == "crate":
        kwargs = {"bounds": block.get("bounds"), "kappa": block.get("kappa", 0.2),
                  "n_waypoints": block.get("n_waypoints", 16)}
        threshold = thresholds.get("target" if target else "internal", -0.05)
        if not target:
            return CrateEnv(success_threshold=threshold, **kwargs)
        return CrateEnv(stiffness=stiffness_value(block.get("stiffness", "nominal")), is_target=True,
                        grasp_offset=block.get("grasp_offset", 0.01), success_threshold=threshold, **kwargs)
    raise ValueError(f"environment {kind!r} is built per trial, not from a block")


def default_config(experiment: str) -> ExperimentConfig:
    """Desk-scale defaults for each experiment."""
    if experiment == "table1":
        # noisy rows need a reachable solve target, hence the looser margin
        return ExperimentConfig(experiment, seeds=[0], trials=100, environment={"env": "mathmanip"},
                                discovery={"solve_margin": 0.5}, options={"rows": TABLE1_ROWS})
    if experiment == "blocks_scaling":
        return ExperimentConfig(experiment, environment={"env": "blocks", "exec_noise": 0.005},
                                train={"max_updates": 1000}, options={"n_blocks": [2, 6, 10, 14, 18]})
    if experiment == "blocks_color_shift":
        return ExperimentConfig(experiment, environment={"env": "blocks", "n_blocks": 2, "exec_noise": 0.005})
    if experiment in ("crate_nominal", "crate_stiffness"):
        levels = ["nominal"] if experiment == "crate_nominal" else ["light", "nominal", "stiff"]
        return ExperimentConfig(experiment, environment={"env": "crate"}, train={"max_updates": 1500},
                                architectures=["MLP", "RMLP", "PMLP", "PMLP-R"], options={"stiffness": levels})
    if experiment == "crate_color_shift":
        return ExperimentConfig(experiment, environment={"env": "crate", "stiffness": "light"},
                                train={"max_updates": 1500})
    if experiment == "discover_only":
        return ExperimentConfig(experiment, seeds=[0], environment={"env": "blocks", "n_blocks": 2})
    if experiment == "pretrain":
        return ExperimentConfig(experiment, seeds=[0], environment={"env": "blocks", "n_blocks": 2},
                                architectures=["RMLP"])
    raise ValueError(f"unknown experiment {experiment!r}")
