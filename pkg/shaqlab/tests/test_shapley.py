"""
Tests for Markov Shapley values and their property checks
"""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy.special import comb
from sklearn.utils._testing import assert_array_almost_equal, assert_array_equal

from shaqlab.mcg import (
    MarkovConvexGame,
    all_coalition_values,
    append_dummy_agent,
    generate_convex_game,
)
from shaqlab.shapley import (
    coalition_weight,
    load_shapley_table,
    marginal_contribution,
    markov_shapley_table_exact,
    markov_shapley_table_permutation,
    markov_shapley_table_sampled,
    save_shapley_table,
)
from shaqlab.validity import (
    check_dummy,
    check_efficiency,
    check_fairness,
    check_marginal_nonnegativity,
    check_markov_core,
)

game = generate_convex_game(3, 2, 2, seed=0)
values = all_coalition_values(game)
exact = markov_shapley_table_exact(game, values=values)

# one state, one action each: V*(C) = 2 R(C) for gamma = 0.5
two_agent_game = MarkovConvexGame(
    (1, 1), np.ones((1, 1, 1)), {1: [[2.0]], 2: [[4.0]], 3: [[10.0]]}, 0.5
)
non_convex_game = MarkovConvexGame(
    (1, 1), np.ones((1, 1, 1)), {1: [[5.0]], 2: [[5.0]], 3: [[6.0]]}, 0.5
)


def test_coalition_weights_sum_to_one():
    for n in range(1, 9):
        total = sum(comb(n - 1, k, exact=True) * coalition_weight(n, k) for k in range(n))
        assert abs(total - 1.0) < 1e-12
    assert coalition_weight(1, 0) == 1.0
    assert coalition_weight(3, 1) == pytest.approx(1.0 / 6.0)


def test_coalition_weight_range():
    with pytest.raises(ValueError):
        coalition_weight(3, 3)
    with pytest.raises(ValueError):
        coalition_weight(0, 0)


def test_hand_computed_shapley_values():
    table = markov_shapley_table_exact(two_agent_game)
    assert_allclose(table.v_phi, [[8.0], [12.0]], atol=1e-7)
    assert_allclose(table.q_phi[0], [[8.0]], atol=1e-7)


def test_single_agent_gets_everything():
    single = generate_convex_game(1, 3, 2, seed=1)
    table = markov_shapley_table_exact(single)
    singleton = all_coalition_values(single)[1]
    assert_array_almost_equal(table.v_phi[0], singleton.v_star)
    assert_array_almost_equal(table.q_phi[0], singleton.q_star)


def test_marginal_contribution():
    contribution = marginal_contribution(game, 1, [0])
    assert contribution.phi_q.shape == (2, 2)
    assert_array_almost_equal(contribution.phi_v, values[3].v_star - values[1].v_star)
    # best actions are separable, so the best own action attains phi_v
    assert_array_almost_equal(contribution.phi_q.max(axis=1), contribution.phi_v)
    with pytest.raises(ValueError):
        marginal_contribution(game, 0, [0, 2])
    with pytest.raises(ValueError):
        marginal_contribution(game, 3, [])


def test_marginal_contribution_uses_given_values():
    contribution = marginal_contribution(game, 2, 3, values=values)
    assert_array_equal(contribution.phi_v, values[7].v_star - values[3].v_star)


def test_exact_matches_permutation_average():
    for seed in range(3):
        small = generate_convex_game(4, 2, 2, seed=seed)
        small_values = all_coalition_values(small)
        by_subset = markov_shapley_table_exact(small, values=small_values)
        by_order = markov_shapley_table_permutation(small, values=small_values)
        assert_allclose(by_subset.v_phi, by_order.v_phi, atol=1e-9)
        for a, b in zip(by_subset.q_phi, by_order.q_phi):
            assert_allclose(a, b, atol=1e-9)


def test_agent_limits():
    many = generate_convex_game(9, 1, 1, seed=0, verify=False)
    with pytest.raises(ValueError):
        markov_shapley_table_permutation(many)
    too_many = generate_convex_game(13, 1, 1, seed=0, verify=False)
    with pytest.raises(ValueError):
        markov_shapley_table_exact(too_many)


def test_efficiency():
    report = check_efficiency(game, exact, values=values)
    assert report.passed
    assert report.details["max_residual"] <= 1e-6
    assert check_efficiency(game, exact)


def test_efficiency_detects_shifted_table():
    shifted = exact.copy()
    shifted.q_phi[0] = shifted.q_phi[0] + 1.0
    report = check_efficiency(game, shifted, values=values)
    assert not report.passed
    assert_allclose(report.details["residuals"], [1.0, 1.0], atol=1e-6)


def test_dummy_agent_gets_nothing():
    extended = append_dummy_agent(game)
    table = markov_shapley_table_exact(extended)
    assert check_dummy(extended, table, 3)
    assert not check_dummy(extended, table, 0)
    assert check_efficiency(extended, table)
    with pytest.raises(ValueError):
        check_dummy(extended, table, 4)


def test_fairness():
    symmetric = generate_convex_game(3, 2, 2, seed=7, symmetric_pair=(0, 1))
    table = markov_shapley_table_exact(symmetric)
    report = check_fairness(symmetric, table)
    assert report.passed
    assert [0, 1] in report.details["pairs"]

    unfair = table.copy()
    unfair.v_phi[0] += 1.0
    assert not check_fairness(symmetric, unfair, pairs=[(0, 1)])


def test_fairness_without_pairs_warns():
    with pytest.warns(UserWarning):
        report = check_fairness(two_agent_game, markov_shapley_table_exact(two_agent_game))
    assert report.passed
    assert report.details["vacuous"]


def test_marginal_nonnegativity():
    assert check_marginal_nonnegativity(game, values=values)
    harmful = MarkovConvexGame(
        (1, 1), np.ones((1, 1, 1)), {1: [[5.0]], 2: [[0.0]], 3: [[1.0]]}, 0.5
    )
    report = check_marginal_nonnegativity(harmful)
    assert not report.passed
    assert report.details["agent"] == 1
    assert report.details["predecessor"] == [0]
    assert report.details["value"] == pytest.approx(-8.0, abs=1e-6)


def test_markov_core():
    assert check_markov_core(game, exact, values=values)
    assert check_markov_core(game, exact, values=values, singletons_only=True)


def test_markov_core_violated_without_convexity():
    table = markov_shapley_table_exact(non_convex_game)
    assert_allclose(table.v_phi, [[6.0], [6.0]], atol=1e-7)
    report = check_markov_core(non_convex_game, table)
    assert not report.passed
    assert report.details["coalition"] == [0]
    assert report.details["coalition_value"] == pytest.approx(10.0, abs=1e-6)


def test_sampled_single_permutation():
    table = markov_shapley_table_sampled(two_agent_game, 1, seed=3)
    # agent 0 either leads (gains 4) or follows (gains 12)
    assert table.v_phi[0, 0] == pytest.approx(4.0, abs=1e-6) or table.v_phi[
        0, 0
    ] == pytest.approx(12.0, abs=1e-6)
    assert table.mode == "sampled"
    assert table.M == 1


def test_sampled_is_reproducible():
    a = markov_shapley_table_sampled(game, 4, seed=11, values=values)
    b = markov_shapley_table_sampled(game, 4, seed=11, values=values)
    assert_array_equal(a.v_phi, b.v_phi)
    for qa, qb in zip(a.q_phi, b.q_phi):
        assert_array_equal(qa, qb)


def test_sampled_converges_to_exact():
    with pytest.warns(UserWarning):
        table = markov_shapley_table_sampled(game, 20000, seed=0, values=values)
    scale = np.abs(exact.v_phi).max()
    assert np.max(np.abs(table.v_phi - exact.v_phi)) <= 0.05 * scale


def test_sampled_single_agent_is_exact():
    single = generate_convex_game(1, 3, 2, seed=1)
    sampled = markov_shapley_table_sampled(single, 1, seed=0)
    assert_allclose(sampled.v_phi, markov_shapley_table_exact(single).v_phi, atol=1e-12)


def test_sampled_is_unbiased():
    estimates = np.array(
        [markov_shapley_table_sampled(game, 1, seed=s, values=values).v_phi for s in range(500)]
    )
    standard_error = estimates.std(axis=0, ddof=1) / np.sqrt(len(estimates))
    assert np.all(np.abs(estimates.mean(axis=0) - exact.v_phi) <= 3 * standard_error + 1e-9)


def test_sampled_error_shrinks_with_M():
    four = generate_convex_game(4, 2, 2, seed=3)
    four_values = all_coalition_values(four)
    target = markov_shapley_table_exact(four, values=four_values).v_phi

    def errors(M):
        return np.array(
            [
                markov_shapley_table_sampled(four, M, seed=s, values=four_values).v_phi - target
                for s in range(400)
            ]
        )

    by_M = {M: errors(M) for M in (1, 4, 10)}
    rmse = {M: np.sqrt(np.mean(e ** 2)) for M, e in by_M.items()}
    assert 0.75 * np.sqrt(10) <= rmse[1] / rmse[10] <= 1.25 * np.sqrt(10)
    mae = [np.mean(np.abs(by_M[M])) for M in (1, 4, 10)]
    assert mae[0] > mae[1] > mae[2]


def test_sampled_rejects_empty_sample():
    with pytest.raises(ValueError):
        markov_shapley_table_sampled(game, 0, values=values)


def test_save_and_load(tmp_path):
    path = str(tmp_path / "table.json")
    table = markov_shapley_table_sampled(game, 3, seed=5, values=values)
    save_shapley_table(table, path, config_hash="abc")
    loaded = load_shapley_table(path)
    assert loaded.mode == "sampled"
    assert loaded.M == 3
    assert loaded.seed == 5
    assert_array_equal(loaded.v_phi, table.v_phi)


@settings(max_examples=15, deadline=None)
@given(
    n_agents=st.integers(2, 4),
    n_states=st.integers(1, 3),
    seed=st.integers(0, 2 ** 31 - 2),
)
def test_convex_games_property(n_agents, n_states, seed):
    random_game = generate_convex_game(n_agents, n_states, 2, seed=seed)
    random_values = all_coalition_values(random_game)
    table = markov_shapley_table_exact(random_game, values=random_values)
    assert check_efficiency(random_game, table, values=random_values)
    assert check_markov_core(random_game, table, values=random_values)
    assert check_marginal_nonnegativity(random_game, values=random_values)
