"""Crate opening with a circular-arc skill.

Frames: world y is vertical. The crate frame sits at ``p_C`` rotated by
``phi_C`` about the vertical; its z-axis is the hinge. The lid extends along
the crate x-axis and the grasp point is at ``(x_g, y_g, z_g)`` in the crate
frame (``y_g = 0`` in the internal model).

The skill sweeps a sphere centred at ``(x_a, y_a, z_a)`` through the grasp
point. Spherical angles use the vertical world y-axis as the polar axis:
inclination is measured from +y and azimuth in the horizontal plane from +x
towards +z. Waypoint ``t`` advances both angles by the fraction ``t / N_T``
of ``(dgamma, dphi)``. Opening the lid by an angle is then a pure inclination
sweep of minus that angle about the hinge point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from crest.core import ContextSchema, ContextVector, PolicyParameters, StructureGraph, TaskOutcome, Variable
from crest.environments.base import Environment
from crest.environments.blocks import block_variables

N_DISTRACTORS = 10
STIFFNESS_LEVELS = {"none": 0.0, "light": 0.1, "nominal": 0.5, "stiff": 1.5}

CRATE_BOUNDS = {
    "x_C": (0.35, 0.55),
    "y_C": (0.0, 0.15),
    "z_C": (-0.15, 0.15),
    "phi_C": (-np.pi / 6, np.pi / 6),
    "x_g": (0.15, 0.30),
    "z_g": (-0.10, 0.10),
    "theta_o": (np.pi / 6, np.pi / 2),
    "red_C": (0.0, 1.0),
    "green_C": (0.0, 1.0),
    "blue_C": (0.0, 1.0),
}
PARAM_NAMES = ("x_a", "y_a", "z_a", "dgamma", "dphi")
PARAM_LOWER = np.array([0.1, -0.15, -0.4, -np.pi, -np.pi])
PARAM_UPPER = np.array([0.9, 0.30, 0.4, np.pi, np.pi])

_RADIUS_EPS = 1e-9


def crate_schema(bounds: dict | None = None) -> ContextSchema:
    bounds = {**CRATE_BOUNDS, **(bounds or {})}
    crate = [Variable(name, *bounds[name], "crate") for name in CRATE_BOUNDS]
    blocks = [v for b in range(N_DISTRACTORS) for v in block_variables(b)]
    return ContextSchema(tuple(crate + blocks))


@dataclass(frozen=True, eq=False)
class ArcSkillTrace:
    waypoints: np.ndarray
    realized: np.ndarray
    achieved_angle: float
    kinematic_error: float


def _crate_frame(c: np.ndarray, grasp_offset: float):
    """Hinge point nearest the grasp, lid axes, grasp point, radius and closed angle."""
    p = c[:, 0:3]
    phi = c[:, 3]
    x_g, z_g = c[:, 4], c[:, 5]
    zeros = np.zeros_like(phi)
    x_hat = np.stack([np.cos(phi), zeros, -np.sin(phi)], axis=-1)
    y_hat = np.stack([zeros, zeros + 1.0, zeros], axis=-1)
    z_hat = np.stack([np.sin(phi), zeros, np.cos(phi)], axis=-1)
    hinge = p + z_g[:, None] * z_hat
    grasp = hinge + x_g[:, None] * x_hat + grasp_offset * y_hat
    radius = np.hypot(x_g, grasp_offset)
    beta0 = np.arctan2(grasp_offset, x_g)
    return hinge, x_hat, y_hat, grasp, radius, beta0


def _arc(center: np.ndarray, grasp: np.ndarray, dgamma: np.ndarray, dphi: np.ndarray, n_points: int):
    v0 = grasp - center
    r = np.linalg.norm(v0, axis=-1)
    degenerate = r < _RADIUS_EPS
    r_safe = np.where(degenerate, 1.0, r)
    incl0 = np.arccos(np.clip(v0[:, 1] / r_safe, -1.0, 1.0))
    azim0 = np.arctan2(v0[:, 2], v0[:, 0])
    frac = np.arange(1, n_points + 1) / n_points
    incl = incl0[:, None] + frac[None, :] * dphi[:, None]
    azim = azim0[:, None] + frac[None, :] * dgamma[:, None]
    unit = np.stack([np.sin(incl) * np.cos(azim), np.cos(incl), np.sin(incl) * np.sin(azim)], axis=-1)
    pts = center[:, None, :] + r[:, None, None] * unit
    pts = np.where(degenerate[:, None, None], grasp[:, None, :], pts)
    return pts, degenerate


def crate_arc_waypoints(c: ContextVector | np.ndarray, theta: PolicyParameters | np.ndarray, n_points: int = 16,
                        grasp_offset: float = 0.0) -> np.ndarray:
    """Desired arc waypoints ``(n_points, 3)`` for one context."""
    if n_points < 2:
        raise ValueError("need at least two waypoints")
    cv = c.values if isinstance(c, ContextVector) else np.asarray(c, dtype=float)
    th = theta.values if isinstance(theta, PolicyParameters) else np.asarray(theta, dtype=float)
    *_, grasp, _, _ = _crate_frame(cv[None], grasp_offset)
    pts, degenerate = _arc(th[None, :3], grasp, th[None, 3], th[None, 4], n_points)
    if degenerate[0]:
        raise ValueError("arc center coincides with the grasp point (zero radius)")
    return pts[0]


class CrateEnv(Environment):
    """Internal (kinematic) crate model, or its target proxy when ``is_target``.

    The target attenuates the achieved angle to ``angle / (1 + kappa * stiffness)``,
    raises the grasp point by ``grasp_offset`` and drops the kinematic term.
    """

    name = "crate"

    def __init__(self, stiffness: float = 0.0, is_target: bool = False, kappa: float = 0.2,
                 grasp_offset: float = 0.01, n_waypoints: int = 16, alpha_angle: float = 1.0,
                 alpha_kinematic: float | None = None, success_threshold: float = -0.05,
                 bounds: dict | None = None):
        if n_waypoints < 2:
            raise ValueError("need at least two waypoints")
        self.schema = crate_schema(bounds)
        self.param_names = PARAM_NAMES
        self.param_lower = PARAM_LOWER.copy()
        self.param_upper = PARAM_UPPER.copy()
        self.stiffness = float(stiffness)
        self.is_target = is_target
        self.kappa = kappa
        self.grasp_offset = grasp_offset if is_target else 0.0
        self.n_waypoints = n_waypoints
        self.alpha_angle = alpha_angle
        self.alpha_kinematic = (0.0 if is_target else 5.0) if alpha_kinematic is None else alpha_kinematic
        self.success_threshold = float(success_threshold)
        if is_target:
            self.name = "crate-target"

    def rollout(self, contexts: np.ndarray, thetas: np.ndarray):
        """Desired and realized trajectories, achieved angles and kinematic errors."""
        contexts = np.atleast_2d(contexts)
        thetas = np.atleast_2d(thetas)
        n = max(len(contexts), len(thetas))
        contexts = np.broadcast_to(contexts, (n, contexts.shape[1]))
        thetas = np.broadcast_to(thetas, (n, thetas.shape[1]))
        hinge, x_hat, y_hat, grasp, radius, beta0 = _crate_frame(contexts, self.grasp_offset)
        if np.any(radius < _RADIUS_EPS):
            raise ValueError("grasp point lies on the hinge axis")
        desired, _ = _arc(thetas[:, :3], grasp, thetas[:, 3], thetas[:, 4], self.n_waypoints)
        q = desired - hinge[:, None, :]
        a = np.einsum("btk,bk->bt", q, x_hat)
        b = np.einsum("btk,bk->bt", q, y_hat)
        angle = np.clip(np.arctan2(b, a) - beta0[:, None], 0.0, np.pi)
        lid = angle + beta0[:, None]
        realized = hinge[:, None, :] + radius[:, None, None] * (
            np.cos(lid)[..., None] * x_hat[:, None, :] + np.sin(lid)[..., None] * y_hat[:, None, :]
        )
        e_k = np.linalg.norm(realized - desired, axis=-1).mean(axis=-1)
        achieved = angle[:, -1]
        if self.is_target:
            achieved = achieved / (1.0 + self.kappa * self.stiffness)
        return desired, realized, achieved, e_k

    def rewards(self, contexts, thetas, rng=None):
        contexts = np.atleast_2d(contexts)
        _, _, achieved, e_k = self.rollout(contexts, thetas)
        goal = np.broadcast_to(contexts[:, 6], achieved.shape)
        return -np.hypot(self.alpha_angle * (achieved - goal), self.alpha_kinematic * e_k)

    def trace(self, context: np.ndarray, theta: np.ndarray) -> ArcSkillTrace:
        desired, realized, achieved, e_k = self.rollout(context[None], theta[None])
        return ArcSkillTrace(desired[0], realized[0], float(achieved[0]), float(e_k[0]))

    def diagnostics(self, context, theta):
        tr = self.trace(context, theta)
        return {
            "achieved_angle": tr.achieved_angle,
            "angle_error": tr.achieved_angle - float(context[6]),
            "kinematic_error": tr.kinematic_error,
        }

    def optimal_geometry(self, contexts: np.ndarray) -> np.ndarray:
        """Arc centred on the hinge point sweeping inclination by minus the goal angle.

        The lid circle lies in a vertical plane through the hinge point, so
        this arc coincides with it: zero kinematic error and exact angle.
        """
        contexts = np.atleast_2d(contexts)
        hinge, *_ = _crate_frame(contexts, self.grasp_offset)
        goal = contexts[:, 6]
        if self.is_target:
            goal = goal * (1.0 + self.kappa * self.stiffness)
        return np.column_stack([hinge, np.zeros(len(contexts)), -goal])

    def has_oracle(self) -> bool:
        return True

    def optimal(self, contexts: np.ndarray) -> np.ndarray:
        return self.optimal_geometry(contexts)

    def truth(self) -> StructureGraph:
        """Dependencies of the hinge-centred optimum on the context."""
        i = self.schema.index
        relevant = {i(n) for n in ("x_C", "y_C", "z_C", "phi_C", "z_g", "theta_o")}
        return StructureGraph(
            frozenset(relevant),
            (frozenset({i("x_C"), i("phi_C"), i("z_g")}), frozenset({i("y_C")}),
             frozenset({i("z_C"), i("phi_C"), i("z_g")}), frozenset(), frozenset({i("theta_o")})),
            self.schema.dimension,
        )


def crate_evaluate(c: ContextVector | np.ndarray, theta: PolicyParameters | np.ndarray, stiffness: float = 0.0,
                   is_target: bool = False, **kwargs) -> tuple[TaskOutcome, ArcSkillTrace]:
    env = CrateEnv(stiffness=stiffness, is_target=is_target, **kwargs)
    cv = c.values if isinstance(c, ContextVector) else np.asarray(c, dtype=float)
    th = theta.values if isinstance(theta, PolicyParameters) else np.asarray(theta, dtype=float)
    return env.evaluate(cv, th), env.trace(cv, th)
