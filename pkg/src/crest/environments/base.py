from __future__ import annotations

from abc import ABC, abstractmethod

import numpy as np

from crest.core import ContextDistribution, ContextSchema, ContextVector, PolicyParameters, TaskOutcome


class Environment(ABC):
    """Single-step task: a context and a controller parameter vector give a reward.

    Subclasses implement :meth:`rewards`, a vectorised evaluator over
    broadcastable batches of contexts ``(B, n)`` and parameters ``(B, d)``.
    Every task here has a best attainable reward of 0.
    """

    name: str = "env"
    schema: ContextSchema
    param_names: tuple[str, ...]
    param_lower: np.ndarray
    param_upper: np.ndarray
    success_threshold: float
    stochastic: bool = False

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    @property
    def param_range(self) -> np.ndarray:
        return self.param_upper - self.param_lower

    @abstractmethod
    def rewards(self, contexts: np.ndarray, thetas: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        ...

    def diagnostics(self, context: np.ndarray, theta: np.ndarray) -> dict[str, float]:
        return {}

    def is_success(self, reward):
        return np.asarray(reward) >= self.success_threshold

    def evaluate(self, c: ContextVector | np.ndarray, theta: PolicyParameters | np.ndarray,
                 rng: np.random.Generator | None = None) -> TaskOutcome:
        cv = c.values if isinstance(c, ContextVector) else np.asarray(c, dtype=float)
        th = theta.values if isinstance(theta, PolicyParameters) else np.asarray(theta, dtype=float)
        if cv.shape != (self.schema.dimension,):
            raise ValueError(f"context of shape {cv.shape}, expected ({self.schema.dimension},)")
        if th.shape != (self.n_params,):
            raise ValueError(f"parameters of shape {th.shape}, expected ({self.n_params},)")
        r = float(self.rewards(cv[None], th[None], rng)[0])
        return TaskOutcome(r, bool(self.is_success(r)), self.diagnostics(cv, th))

    def params(self, values) -> PolicyParameters:
        return PolicyParameters(values, self.param_names)

    def default_distribution(self) -> ContextDistribution:
        return ContextDistribution(self.schema)

    def has_oracle(self) -> bool:
        return False

    def optimal(self, contexts: np.ndarray) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no closed-form optimum")

    def truth(self):
        """Ground-truth structure, when the environment knows it."""
        return None
