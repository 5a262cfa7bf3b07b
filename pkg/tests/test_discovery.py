from __future__ import annotations

import itertools
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crest.core import StructureGraph, derive_rng
from crest.discovery import (
    DiscoveryConfig, DiscoveryError, DiscoveryMetrics, discover, intervention_value, mean_metrics,
    minimal_change_subset, phase1_relevant_set, score_discovery,
)
from crest.environments import BlocksEnv, CrateEnv, MathManipEnv, color_indices, mathmanip_generate
from crest.solver import solve_context


def _names(env, idx):
    return {env.schema.variables[i].name for i in idx}


def test_blocks_structure_recovered():
    env = BlocksEnv(2)
    res = discover(env, DiscoveryConfig(), seed=0)
    assert _names(env, res.structure.relevant) == {"x_0", "x_1", "h_1", "z_0", "z_1"}
    assert [_names(env, p) for p in res.structure.parents] == [{"x_0", "x_1"}, {"h_1"}, {"z_0", "z_1"}]
    assert res.inconclusive == 0


def test_height_intervention_needs_only_vertical_change():
    env = BlocksEnv(2)
    res = discover(env, DiscoveryConfig(), seed=1)
    h1 = env.schema.index("h_1")
    hits = [s for (_, k, _), s in res.subsets.items() if k == h1]
    # small height changes can stay within the base solution's slack
    assert all(set(s) <= {1} for s in hits) and (1,) in hits


@pytest.mark.parametrize("seed", range(5))
def test_color_never_relevant(seed):
    for env in (BlocksEnv(3),):
        relevant, *_ = phase1_relevant_set(env, DiscoveryConfig(), seed)
        assert not relevant & set(color_indices(env.schema))


def test_crate_structure_contains_articulation_variables():
    env = CrateEnv()
    res = discover(env, DiscoveryConfig(), seed=0)
    found = _names(env, res.structure.relevant)
    assert {"x_C", "y_C", "z_C", "phi_C", "z_g", "theta_o"} <= found
    assert not found & {"red_C", "green_C", "blue_C"}


def test_linear_goal_reaching_aggregate_exact():
    cfg = DiscoveryConfig(solve_margin=0.5)
    for trial in range(10):
        inst = mathmanip_generate(8, "linear", 0.0, 4, rng=np.random.default_rng(trial))
        res = discover(MathManipEnv(inst), cfg, seed=trial)
        m = score_discovery(res.structure, inst.truth())
        assert m.agg_accuracy == 1.0 and m.agg_false_positive == 0.0


def test_unchanged_parameters_need_empty_subset():
    calls = []
    subset = minimal_change_subset(lambda th: calls.append(th) or True, np.ones(3), np.ones(3))
    assert subset == () and len(calls) == 1


def _brute_force(succeeds, base, new):
    d = len(base)
    found = []
    for mask in range(2 ** d):
        subset = tuple(j for j in range(d) if mask >> j & 1)
        trial = base.copy()
        trial[list(subset)] = new[list(subset)]
        if succeeds(trial):
            found.append(subset)
    return min(found, key=lambda s: (len(s), s)) if found else None


@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_bfs_matches_exhaustive_enumeration(d, seed):
    rng = np.random.default_rng(seed)
    base = rng.normal(size=d)
    new = base + rng.normal(size=d) * (rng.random(d) < 0.8)
    table = {}

    def succeeds(theta):
        key = tuple(theta != base)
        if key not in table:
            table[key] = bool(rng.random() < 0.3)
        return table[key]

    assert minimal_change_subset(succeeds, base, new) == _brute_force(succeeds, base, new)


@pytest.mark.parametrize("kind", ["linear", "nonlinear"])
def test_bfs_matches_exhaustive_on_goal_reaching(kind):
    for seed in range(10):
        inst = mathmanip_generate(4, kind, 0.0, 2, rng=np.random.default_rng(seed))
        env = MathManipEnv(inst)
        c = inst.s0.values
        base = solve_context(env, c, rng=np.random.default_rng(seed), target=0.25 * env.success_threshold).theta
        k = inst.tau_true[0]
        c2 = c.copy()
        c2[k] = -c[k]
        new = solve_context(env, c2, base, rng=np.random.default_rng(seed + 1),
                            target=0.25 * env.success_threshold).theta
        ok = lambda th: bool(env.is_success(env.rewards(c2, th)[0]))  # noqa: E731
        assert minimal_change_subset(ok, base, new) == _brute_force(ok, base, new)


def test_subset_cap_limits_search():
    assert minimal_change_subset(lambda th: np.all(th == 1), np.zeros(3), np.ones(3), cap=2) is None
    assert minimal_change_subset(lambda th: np.all(th == 1), np.zeros(3), np.ones(3)) == (0, 1, 2)


def test_more_interventions_never_shrink_relevant_set():
    env = MathManipEnv(mathmanip_generate(8, "nonlinear", 0.0, 4, rng=np.random.default_rng(4)))
    sets = [phase1_relevant_set(env, DiscoveryConfig(interventions_per_variable=r), 7)[0] for r in (1, 2, 4)]
    assert sets[0] <= sets[1] <= sets[2]


def test_graph_consistency_and_json():
    env = BlocksEnv(2)
    res = discover(env, DiscoveryConfig(n_contexts=2), seed=3)
    assert frozenset().union(*res.structure.parents) <= res.structure.relevant
    data = json.loads(res.dumps(env, env.truth()))
    assert set(data) >= {"relevant", "parents", "metrics", "config", "seeds"}
    assert DiscoveryConfig.from_json(data["config"]) == res.config
    assert StructureGraph.from_json(data, env.schema, env.param_names) == res.structure


def test_unsolvable_environment_is_reported():
    env = BlocksEnv(2, success_threshold=0.5)
    with pytest.raises(DiscoveryError):
        discover(env, DiscoveryConfig(solver_budget=100, max_base_attempts=2))


def test_extreme_sampler_alternates_bounds():
    env = BlocksEnv(2)
    var = env.schema.variables[0]
    rng = derive_rng(0)
    assert intervention_value(env, env.schema.midpoint, 0, 0, "extreme", rng) == var.lower
    assert intervention_value(env, env.schema.midpoint, 0, 1, "extreme", rng) == var.upper


def test_extreme_sampler_recovers_blocks():
    env = BlocksEnv(2)
    res = discover(env, DiscoveryConfig(intervention_sampler="extreme"), seed=0)
    assert res.structure.relevant == env.truth().relevant


def test_config_validation():
    with pytest.raises(ValueError):
        DiscoveryConfig(n_contexts=0)
    with pytest.raises(ValueError):
        DiscoveryConfig(intervention_sampler="gaussian")
    with pytest.raises(ValueError):
        DiscoveryConfig(solve_margin=0.0)


def test_discovery_is_deterministic():
    env = BlocksEnv(2)
    a, b = discover(env, seed=5), discover(env, seed=5)
    assert a.structure == b.structure and a.evaluations == b.evaluations and a.subsets == b.subsets


# --- scoring -------------------------------------------------------------------------------------------------


def test_exact_match_scores():
    g = StructureGraph(frozenset({1, 2}), (frozenset({1}), frozenset({2})), 10)
    assert score_discovery(g, g).as_tuple() == (1.0, 0.0, 1.0, 0.0)


def test_one_extra_variable_of_ten():
    truth = StructureGraph(frozenset({1, 2}), (frozenset({1, 2}),), 10)
    found = StructureGraph(frozenset({1, 2, 3}), (frozenset({1, 2}),), 10)
    m = score_discovery(found, truth)
    assert m.agg_accuracy == 1.0 and m.agg_false_positive == pytest.approx(1 / 8)


def test_missing_variable_scores_zero_accuracy():
    truth = StructureGraph(frozenset({1, 2}), (frozenset({1}), frozenset({2})), 5)
    found = StructureGraph(frozenset({1}), (frozenset({1}), frozenset()), 5)
    m = score_discovery(found, truth)
    assert m.agg_accuracy == 0.0 and m.map_accuracy == 0.5


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        score_discovery(StructureGraph(frozenset(), (frozenset(),), 3), StructureGraph(frozenset(), (frozenset(),), 4))


@st.composite
def graph_pairs(draw):
    n, d = draw(st.integers(1, 8)), draw(st.integers(1, 4))

    def graph():
        rel = frozenset(draw(st.sets(st.integers(0, n - 1))))
        parents = tuple(frozenset(draw(st.sets(st.sampled_from(sorted(rel))))) if rel else frozenset()
                        for _ in range(d))
        return StructureGraph(rel, parents, n)

    return graph(), graph()


@given(graph_pairs())
def test_metrics_bounded(pair):
    m = score_discovery(*pair)
    assert all(0.0 <= v <= 1.0 for v in m.as_tuple())


def test_metrics_validated_and_averaged():
    with pytest.raises(ValueError):
        DiscoveryMetrics(1.2, 0, 0, 0)
    m = mean_metrics([DiscoveryMetrics(1, 0, 1, 0), DiscoveryMetrics(0, 0.5, 0.5, 0.25)])
    assert m.as_tuple() == (0.5, 0.25, 0.75, 0.125)
    with pytest.raises(ValueError):
        mean_metrics([])
