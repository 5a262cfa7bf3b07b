from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from crest.core import ContextSchema, ContextVector, Variable
from crest.environments import (
    STIFFNESS_LEVELS, BlocksEnv, CrateEnv, MathManipEnv, MathManipInstance, TargetShiftConfig, blocks_evaluate,
    blocks_optimal, blocks_target_evaluate, color_half_distribution, color_indices, crate_arc_waypoints,
    crate_evaluate, mathmanip_evaluate, mathmanip_generate,
)
from crest.environments.crate import crate_schema

# --- goal-reaching toy ---------------------------------------------------------------------------------------


def _state_schema(dim: int) -> ContextSchema:
    return ContextSchema(tuple(Variable(f"s{i}", -0.2, 0.2) for i in range(dim)))


def test_identity_instance_zero_residual():
    s0 = ContextVector(_state_schema(2), [0.05, -0.1])
    inst = MathManipInstance(2, "linear", 0.0, (0, 1), np.eye(2), np.eye(2), s0.values.copy(), s0)
    out = mathmanip_evaluate(inst, np.zeros(2))
    assert out.reward == 0.0 and out.success


def test_two_dim_full_goal_is_permutation():
    inst = mathmanip_generate(2, "linear", 0.0, n_relevant=2, goal_dim=2, rng=np.random.default_rng(0))
    G = inst.G
    assert sorted(G.sum(axis=0).tolist()) == [1.0, 1.0] and np.all(G.sum(axis=1) == 1)


@pytest.mark.parametrize("kind", ["linear", "nonlinear"])
def test_generated_instance_invariants(kind):
    for seed in range(20):
        inst = mathmanip_generate(8, kind, 0.0, 4, rng=np.random.default_rng(seed))
        assert np.all(inst.G.sum(axis=1) == 1)
        assert set(np.nonzero(inst.G)[1]) == set(inst.tau_true)
        truth = inst.truth()
        assert truth.relevant == frozenset(inst.tau_true)
        assert frozenset().union(*truth.parents) == truth.relevant


def test_generate_rejects_infeasible_counts():
    with pytest.raises(ValueError):
        mathmanip_generate(4, "linear", 0.0, 5)
    with pytest.raises(ValueError):
        mathmanip_generate(4, "quadratic", 0.0, 2)


def _loop_reward(inst: MathManipInstance, theta: np.ndarray) -> float:
    # matrix-free evaluator written independently of the vectorised one
    A = np.asarray(inst.A)
    total = 0.0
    for row in range(inst.G.shape[0]):
        i = int(np.argmax(inst.G[row]))
        s = inst.s0.values[i]
        for j in range(inst.dim):
            s += A[i, j] * theta[j]
        total += (s - inst.g_desired[row]) ** 2
    return -np.sqrt(total)


def test_linear_reward_matches_loop_evaluator():
    rng = np.random.default_rng(3)
    for _ in range(100):
        inst = mathmanip_generate(int(rng.integers(2, 10)), "linear", 0.0, 1, rng=rng)
        inst = mathmanip_generate(inst.dim, "linear", 0.0, int(rng.integers(1, inst.dim + 1)), rng=rng)
        theta = rng.uniform(-1, 1, inst.dim)
        assert mathmanip_evaluate(inst, theta).reward == pytest.approx(_loop_reward(inst, theta), abs=1e-12)


def test_sensitivity_scan_recovers_relevant_set():
    for kind in ("linear", "nonlinear"):
        inst = mathmanip_generate(8, kind, 0.0, 4, rng=np.random.default_rng(11))
        env = MathManipEnv(inst)
        theta = np.random.default_rng(1).uniform(-1, 1, 8)
        base = env.rewards(inst.s0.values, theta)[0]
        sensitive = set()
        for i in range(8):
            c = inst.s0.values.copy()
            c[i] += 0.05
            if env.rewards(c, theta)[0] != base:
                sensitive.add(i)
        assert sensitive == set(inst.tau_true)


def test_limited_noise_std_matches_linear_propagation():
    inst = mathmanip_generate(8, "linear", 0.01, 4, rng=np.random.default_rng(2))
    env = MathManipEnv(inst)
    theta = np.zeros(8)
    rewards = env.rewards(np.repeat(inst.s0.values[None], 10_000, axis=0), theta, np.random.default_rng(0))
    assert np.std(rewards) > 0
    # first-order: r = -|e + G w| with w ~ N(0, s^2 I) has std s * |G^T e| / |e| = s
    residual = inst.G @ (inst.s0.values + inst.delta_state(theta)[0]) - inst.g_desired
    predicted = inst.noise_sigma * np.linalg.norm(inst.G.T @ residual) / np.linalg.norm(residual)
    assert abs(np.std(rewards) - predicted) <= 0.2 * predicted


@given(st.integers(0, 10_000), st.integers(0, 7), st.floats(-0.2, 0.2))
def test_linear_reward_invariant_to_irrelevant_states(seed, k, value):
    inst = mathmanip_generate(8, "linear", 0.0, 4, rng=np.random.default_rng(seed))
    env = MathManipEnv(inst)
    theta = np.random.default_rng(seed + 1).uniform(-1, 1, 8)
    c = inst.s0.values.copy()
    c[k] = value
    if k not in inst.tau_true:
        assert env.rewards(c, theta)[0] == env.rewards(inst.s0.values, theta)[0]


def test_noisy_instance_requires_rng():
    inst = mathmanip_generate(4, "linear", 0.01, 2, rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        mathmanip_evaluate(inst, np.zeros(4))


# --- block stacking ------------------------------------------------------------------------------------------


def _blocks_context(**values) -> ContextVector:
    env = BlocksEnv(2)
    c = ContextVector(env.schema, env.schema.midpoint)
    return c.replace(**values)


def test_blocks_closed_form_example():
    c = _blocks_context(x_0=0.10, x_1=0.30, z_0=-0.05, z_1=0.10, h_1=0.057)
    theta = blocks_optimal(c)
    np.testing.assert_allclose(theta.values, [0.20, 0.057, 0.15], atol=1e-15)
    assert blocks_evaluate(c, theta).reward == pytest.approx(0.0, abs=1e-15)


def test_blocks_identity_case():
    c = _blocks_context(x_0=0.3, x_1=0.3, z_0=0.1, z_1=0.1, h_1=0.06)
    np.testing.assert_allclose(blocks_optimal(c).values, [0.0, 0.06, 0.0], atol=1e-15)


def test_blocks_oracle_self_consistency():
    env = BlocksEnv(2)
    contexts = env.default_distribution().sample(1000, 0)
    r = env.rewards(contexts, env.optimal(contexts))
    assert np.max(np.abs(r)) <= 1e-12


@given(st.integers(0, 10_000), st.lists(st.floats(-0.1, 0.1), min_size=3, max_size=3))
def test_blocks_oracle_is_unique_maximum(seed, delta):
    env = BlocksEnv(2)
    c = env.default_distribution().sample(1, seed)
    best = env.optimal(c)[0]
    theta = best + np.array(delta)
    r = env.rewards(c, theta)[0]
    if np.any(theta != best):
        assert r < 0
    assert r <= 0


@pytest.mark.parametrize("n_blocks", [2, 5])
def test_blocks_reward_ignores_irrelevant_variables(n_blocks):
    env = BlocksEnv(n_blocks)
    rng = np.random.default_rng(n_blocks)
    c = env.default_distribution().sample(20, 1)
    theta = rng.uniform(env.param_lower, env.param_upper, (20, 3))
    base = env.rewards(c, theta)
    changed = c.copy()
    for i, v in enumerate(env.schema.variables):
        if v.name.split("_")[0] in ("psi", "red", "green", "blue") or int(v.name.split("_")[1]) >= 2:
            changed[:, i] = rng.uniform(v.lower, v.upper, 20)
    changed[:, env.schema.index("h_0")] = rng.uniform(0.04, 0.08, 20)
    np.testing.assert_array_equal(env.rewards(changed, theta), base)


def test_blocks_target_without_noise_equals_internal():
    env = BlocksEnv(2)
    c = ContextVector(env.schema, env.default_distribution().sample(1, 4)[0])
    theta = np.array([0.1, 0.05, -0.1])
    assert blocks_target_evaluate(c, theta, TargetShiftConfig(0.0)).reward == blocks_evaluate(c, theta).reward


@pytest.mark.parametrize("sigma", [0.005, 0.012])
def test_blocks_target_success_rate_matches_chi_distribution(sigma):
    env = BlocksEnv(2)
    c = ContextVector(env.schema, env.default_distribution().sample(1, 2)[0])
    theta = blocks_optimal(c)
    rng = np.random.default_rng(0)
    n = 1000
    hits = sum(blocks_target_evaluate(c, theta, TargetShiftConfig(sigma), rng).success for _ in range(n))
    p = stats.chi.cdf(0.025 / sigma, df=3)
    assert abs(hits / n - p) <= 4 * np.sqrt(p * (1 - p) / n) + 2e-3


def test_color_half_shift_changes_sampling_only():
    env = BlocksEnv(2)
    base = env.default_distribution()
    lower, upper = color_half_distribution(base, "lower"), color_half_distribution(base, "upper")
    a, b = lower.sample(50, 3), upper.sample(50, 3)
    cols = list(color_indices(env.schema))
    assert np.all(a[:, cols] <= 0.5) and np.all(b[:, cols] >= 0.5)
    others = [i for i in range(env.schema.dimension) if i not in cols]
    np.testing.assert_array_equal(a[:, others], b[:, others])
    theta = env.optimal(a) + 0.01
    np.testing.assert_array_equal(env.rewards(a, theta), env.rewards(b, theta))


def test_blocks_rejects_malformed_context():
    schema = ContextSchema(tuple(Variable(f"v{i}", 0, 1) for i in range(9)))
    with pytest.raises(ValueError):
        blocks_evaluate(ContextVector(schema, np.zeros(9)), np.zeros(3))


# --- crate opening -------------------------------------------------------------------------------------------


def _crate_contexts(n: int, seed: int = 0) -> np.ndarray:
    return CrateEnv().default_distribution().sample(n, seed)


def test_crate_zero_sweep_stays_at_grasp():
    c = _crate_contexts(1)[0]
    theta = np.array([0.3, 0.1, 0.05, 0.0, 0.0])
    pts = crate_arc_waypoints(c, theta)
    env = CrateEnv()
    grasp = env.rollout(c, np.r_[theta[:3], 0, 0])[0][0, 0]
    np.testing.assert_allclose(pts, np.repeat(grasp[None], len(pts), axis=0), atol=1e-12)


def test_crate_waypoints_on_sphere():
    rng = np.random.default_rng(1)
    for c in _crate_contexts(20, 1):
        theta = rng.uniform(CrateEnv().param_lower, CrateEnv().param_upper)
        pts = crate_arc_waypoints(c, theta, 16)
        grasp = crate_arc_waypoints(c, np.r_[theta[:3], 0, 0], 2)[0]
        radii = np.linalg.norm(pts - theta[:3], axis=1)
        np.testing.assert_allclose(radii, np.linalg.norm(grasp - theta[:3]), atol=1e-9)


def _angles(points: np.ndarray, center: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    v = points - center
    r = np.linalg.norm(v, axis=-1)
    return np.arccos(v[:, 1] / r), np.arctan2(v[:, 2], v[:, 0])


def test_crate_reversed_sweep_mirrors_angles():
    rng = np.random.default_rng(2)
    for c in _crate_contexts(20, 2):
        theta = np.r_[rng.uniform([0.3, 0.1, -0.1], [0.6, 0.2, 0.1]), rng.uniform(-0.3, 0.3, 2)]
        mirrored = theta * np.array([1, 1, 1, -1, -1])
        grasp = crate_arc_waypoints(c, np.r_[theta[:3], 0, 0], 2)[:1]
        i0, a0 = _angles(grasp, theta[:3])
        i1, a1 = _angles(crate_arc_waypoints(c, theta), theta[:3])
        i2, a2 = _angles(crate_arc_waypoints(c, mirrored), theta[:3])
        # sweeps stay inside (0, pi) inclination here, so no pole wrap
        if np.all((i1 > 0) & (i1 < np.pi) & (i2 > 0) & (i2 < np.pi)):
            np.testing.assert_allclose(i1 - i0, i0 - i2, atol=1e-9)
            np.testing.assert_allclose(np.angle(np.exp(1j * (a1 - a0))), np.angle(np.exp(1j * (a0 - a2))), atol=1e-9)


def test_crate_zero_radius_rejected():
    c = _crate_contexts(1)[0]
    grasp = crate_arc_waypoints(c, np.array([0.3, 0.1, 0.0, 0.0, 0.0]), 2)[0]
    with pytest.raises(ValueError):
        crate_arc_waypoints(c, np.r_[grasp, 0.1, 0.1])
    with pytest.raises(ValueError):
        crate_arc_waypoints(c, np.r_[0.3, 0.1, 0.0, 0.1, 0.1], n_points=1)


def test_crate_grasp_on_hinge_rejected():
    env = CrateEnv(bounds={"x_g": (0.0, 0.3)})
    c = env.schema.midpoint.copy()
    c[env.schema.index("x_g")] = 0.0
    with pytest.raises(ValueError):
        env.rewards(c, np.array([0.3, 0.1, 0.0, 0.0, -0.5]))


def test_crate_hinge_centred_arc_is_exact():
    env = CrateEnv()
    contexts = _crate_contexts(200, 3)
    theta = env.optimal(contexts)
    # the inclination sweep is matched to the goal opening angle
    np.testing.assert_allclose(theta[:, 4], -contexts[:, env.schema.index("theta_o")])
    _, _, achieved, e_k = env.rollout(contexts, theta)
    np.testing.assert_allclose(e_k, 0.0, atol=1e-12)
    np.testing.assert_allclose(achieved, contexts[:, 6], atol=1e-12)
    np.testing.assert_allclose(env.rewards(contexts, theta), 0.0, atol=1e-12)


def test_crate_off_circle_arc_has_kinematic_error():
    env = CrateEnv()
    contexts = _crate_contexts(50, 4)
    theta = env.optimal(contexts)
    theta[:, 2] += 0.05
    _, _, _, e_k = env.rollout(contexts, theta)
    assert np.all(e_k > 1e-4)


def test_crate_without_kinematic_weight_rewards_angle_only():
    env = CrateEnv(alpha_kinematic=0.0)
    contexts = _crate_contexts(30, 5)
    theta = env.optimal(contexts)
    theta[:, 1] += 0.04
    theta[:, 4] *= 0.8
    _, _, achieved, _ = env.rollout(contexts, theta)
    np.testing.assert_allclose(env.rewards(contexts, theta), -np.abs(achieved - contexts[:, 6]), atol=1e-15)


def test_crate_target_angle_decreases_with_stiffness():
    contexts = _crate_contexts(30, 6)
    theta = CrateEnv().optimal(contexts)
    angles = []
    for level in ("light", "nominal", "stiff"):
        env = CrateEnv(stiffness=STIFFNESS_LEVELS[level], is_target=True)
        angles.append(env.rollout(contexts, theta)[2])
    assert np.all(angles[0] > angles[1]) and np.all(angles[1] > angles[2])


def test_crate_target_oracle_compensates_stiffness():
    for level in ("none", "light", "stiff"):
        env = CrateEnv(stiffness=STIFFNESS_LEVELS[level], is_target=True)
        contexts = _crate_contexts(30, 7)
        np.testing.assert_allclose(env.rewards(contexts, env.optimal(contexts)), 0.0, atol=1e-12)


@given(st.integers(0, 10_000), st.lists(st.floats(-0.05, 0.05), min_size=3, max_size=3))
def test_kinematic_error_translation_invariant(seed, shift):
    env = CrateEnv()
    c = _crate_contexts(1, seed)
    rng = np.random.default_rng(seed)
    theta = env.optimal(c) + rng.uniform(-0.05, 0.05, 5)
    moved_c, moved_theta = c.copy(), theta.copy()
    moved_c[:, 0:3] += shift
    moved_theta[:, 0:3] += shift
    e0, e1 = env.rollout(c, theta)[3], env.rollout(moved_c, moved_theta)[3]
    np.testing.assert_allclose(e0, e1, atol=1e-12)


def test_crate_reward_ignores_color_and_distractors():
    env = CrateEnv()
    contexts = _crate_contexts(20, 8)
    theta = env.optimal(contexts) + 0.02
    changed = contexts.copy()
    changed[:, 7:] = env.default_distribution().sample(20, 99)[:, 7:]
    np.testing.assert_array_equal(env.rewards(changed, theta), env.rewards(contexts, theta))


def test_crate_evaluate_returns_trace():
    c = ContextVector(crate_schema(), _crate_contexts(1, 9)[0])
    env = CrateEnv()
    outcome, trace = crate_evaluate(c, env.optimal(c.values[None])[0])
    assert outcome.success and trace.kinematic_error >= 0
    assert trace.waypoints.shape == (16, 3) and trace.realized.shape == (16, 3)


def test_evaluations_are_deterministic():
    env = CrateEnv()
    c = _crate_contexts(5, 10)
    theta = env.optimal(c) + 0.03
    np.testing.assert_array_equal(env.rewards(c, theta), env.rewards(c.copy(), theta.copy()))


def test_blocks_error_matches_positions():
    env = BlocksEnv(2)
    c = env.default_distribution().sample(30, 2)
    theta = np.random.default_rng(0).uniform(env.param_lower, env.param_upper, (30, 3))
    np.testing.assert_allclose(env.position_error(c, theta), env.achieved_position(c, theta) - env.goal_position(c),
                               atol=1e-15)
