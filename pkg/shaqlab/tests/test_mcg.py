"""
Tests for Markov convex games and coalition value iteration
"""
from itertools import product
from tempfile import mkdtemp

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from numpy.testing import assert_raises
from sklearn.utils._testing import assert_array_equal

from shaqlab.mcg import (
    ConvergenceError,
    MarkovConvexGame,
    all_coalition_values,
    append_dummy_agent,
    check_convexity,
    coalition_mask,
    coalition_members,
    coalition_value_iteration,
    generate_convex_game,
    joint_value_iteration,
    load_game,
    policy_evaluation,
    save_game,
    symmetric_pairs,
    validate_game,
)

rng = np.random.RandomState(42)

# action dependent dynamics, arbitrary nonnegative rewards
random_transition = rng.uniform(size=(2, 4, 2))
random_transition /= random_transition.sum(axis=2, keepdims=True)
random_game = MarkovConvexGame(
    (2, 2),
    random_transition,
    {1: rng.uniform(size=(2, 2)), 2: rng.uniform(size=(2, 2)), 3: rng.uniform(size=(2, 4))},
    0.9,
)

non_convex_game = MarkovConvexGame(
    (1, 1), np.ones((1, 1, 1)), {1: [[5.0]], 2: [[5.0]], 3: [[6.0]]}, 0.5
)


def single_state_game(grand_reward, gamma):
    n_joint = len(grand_reward)
    return MarkovConvexGame(
        (2, n_joint // 2),
        np.ones((1, n_joint, 1)),
        {1: [[0.0, 0.0]], 2: [[0.0] * (n_joint // 2)], 3: [grand_reward]},
        gamma,
    )


def test_coalition_masks():
    assert coalition_mask([0, 2]) == 5
    assert coalition_members(5) == (0, 2)
    assert coalition_members(0) == ()


def test_joint_action_ranking():
    game = MarkovConvexGame(
        (2, 3),
        np.ones((1, 6, 1)),
        {1: [[0, 0]], 2: [[0, 0, 0]], 3: [[0, 1, 2, 3, 4, 5]]},
        0.9,
    )
    # agent 0 is the most significant digit
    assert game.joint_action_rank((1, 0)) == 3
    assert game.joint_action((1, 2)) == (1, 2)
    assert_array_equal(game.joint_ranks(2), [0, 1, 2])
    assert_array_equal(game.joint_ranks(1), [0, 3])
    assert_array_equal(game.joint_ranks(0), [0])


def test_tables_are_read_only():
    with pytest.raises(ValueError):
        random_game.transition[0, 0, 0] = 1.0
    with pytest.raises(ValueError):
        random_game.reward(3)[0, 0] = 1.0


def test_validate_well_formed():
    assert validate_game(random_game) == []
    assert validate_game(generate_convex_game(2, 2, 2, seed=3)) == []


def test_validate_transition_normalization():
    game = MarkovConvexGame((2,), [[[1.0], [0.9]]], {1: [[1.0, 0.0]]}, 0.9)
    violations = validate_game(game)
    assert len(violations) == 1
    assert "sums to" in violations[0]


def test_validate_empty_coalition_reward():
    game = MarkovConvexGame((2,), [[[1.0], [1.0]]], {0: [[1.0]], 1: [[1.0, 0.0]]}, 0.9)
    violations = validate_game(game)
    assert len(violations) == 1
    assert "empty coalition" in violations[0]


def test_validate_gamma_and_negative_rewards():
    game = MarkovConvexGame((2,), [[[1.0], [1.0]]], {1: [[-1.0, 0.0]]}, 1.5)
    assert len(validate_game(game)) == 2


def test_missing_coalition_rejected():
    assert_raises(ValueError, MarkovConvexGame, (2, 2), np.ones((1, 4, 1)), {1: [[0, 0]]}, 0.9)


def test_too_many_agents():
    assert_raises(ValueError, generate_convex_game, 17, 1, 2)


def test_empty_coalition_is_zero():
    table = coalition_value_iteration(random_game, 0)
    assert_array_equal(table.v_star, np.zeros(2))
    assert_array_equal(table.q_star, np.zeros((2, 1)))


def test_single_agent_geometric_series():
    game = MarkovConvexGame((2,), [[[1.0], [1.0]]], {1: [[1.0, 0.0]]}, 0.9)
    table = coalition_value_iteration(game, [0])
    assert abs(table.v_star[0] - 10.0) <= 1e-8
    assert table.greedy_policy[0] == 0


def test_value_iteration_matches_policy_enumeration():
    for mask in (1, 2, 3):
        table = coalition_value_iteration(random_game, mask)
        n_actions = random_game.coalition_action_count(mask)
        best = np.full(2, -np.inf)
        for policy in product(range(n_actions), repeat=2):
            best = np.maximum(best, policy_evaluation(random_game, mask, policy))
        assert_allclose(table.v_star, best, atol=1e-7)


def test_greedy_policy_attains_value():
    table = joint_value_iteration(random_game)
    assert_allclose(table.q_star.max(axis=1), table.v_star)
    assert_allclose(
        policy_evaluation(random_game, 3, table.greedy_policy), table.v_star, atol=1e-7
    )


def test_joint_equals_grand_coalition():
    joint = joint_value_iteration(random_game)
    grand = coalition_value_iteration(random_game, 3)
    assert_allclose(joint.q_star, grand.q_star, atol=1e-8)

    single = MarkovConvexGame((2,), [[[1.0], [1.0]]], {1: [[1.0, 0.0]]}, 0.9)
    assert_array_equal(joint_value_iteration(single).q_star, coalition_value_iteration(single, 1).q_star)


def test_joint_value_single_state():
    game = single_state_game([12.0, 0.0, 7.0, 6.0], 0.5)
    assert abs(joint_value_iteration(game).v_star[0] - 24.0) <= 1e-8


def test_value_monotone_in_gamma():
    low = MarkovConvexGame(random_game.actions_per_agent, random_game.transition,
                           random_game.coalition_reward, 0.5)
    for mask in range(4):
        assert np.all(
            coalition_value_iteration(random_game, mask).v_star
            >= coalition_value_iteration(low, mask).v_star
        )


def test_convergence_error():
    with pytest.raises(ConvergenceError) as info:
        coalition_value_iteration(random_game, 3, max_iter=3)
    assert info.value.n_iter == 3
    assert info.value.residual > 0


def test_geometric_residual_decay():
    for seed in range(10):
        game = generate_convex_game(2, 3, 2, seed=seed, verify=False)
        tol = 1e-8
        stop = tol * (1 - game.gamma) / game.gamma
        for mask in (1, 2, 3):
            table = coalition_value_iteration(game, mask, tol=tol)
            first_change = game.reward(mask).max()
            bound = 2 + np.log(stop / first_change) / np.log(game.gamma)
            assert table.n_iter <= bound


def test_generated_games_are_convex():
    assert check_convexity(generate_convex_game(2, 1, 2, seed=0))
    game = generate_convex_game(3, 3, 2, seed=1)
    assert check_convexity(game)
    assert validate_game(game) == []


def test_non_convex_fixture():
    report = check_convexity(non_convex_game)
    assert not report.passed
    details = report.details
    assert details["v_m"] + details["v_k"] > details["v_union"] + details["v_intersection"]
    assert not check_convexity(non_convex_game, disjoint_only=True)


def test_disjoint_check_agrees():
    game = generate_convex_game(3, 2, 3, seed=5)
    values = all_coalition_values(game)
    assert check_convexity(game, values=values).passed
    assert check_convexity(game, values=values, disjoint_only=True).passed


def test_generator_is_deterministic():
    assert generate_convex_game(3, 2, 2, seed=11) == generate_convex_game(3, 2, 2, seed=11)
    assert generate_convex_game(3, 2, 2, seed=11) != generate_convex_game(3, 2, 2, seed=12)


def test_values_nonnegative_and_supermodular_increments():
    game = generate_convex_game(3, 2, 2, seed=4)
    values = all_coalition_values(game)
    for mask, table in values.items():
        assert np.all(table.v_star >= 0)
    # an agent gains more when joining a larger coalition
    for agent in range(3):
        bit = 1 << agent
        for bigger in range(8):
            if bigger & bit:
                continue
            for smaller in range(8):
                if smaller & ~bigger or smaller == bigger:
                    continue
                gain_big = values[bigger | bit].v_star - values[bigger].v_star
                gain_small = values[smaller | bit].v_star - values[smaller].v_star
                assert np.all(gain_big >= gain_small - 1e-8)


def test_cached_and_parallel_values_agree():
    game = generate_convex_game(3, 2, 2, seed=8)
    serial = all_coalition_values(game)
    cached = all_coalition_values(game, memory=mkdtemp())
    parallel = all_coalition_values(game, n_jobs=2)
    for mask in serial:
        assert_array_equal(serial[mask].q_star, cached[mask].q_star)
        assert_array_equal(serial[mask].q_star, parallel[mask].q_star)


def test_dummy_agent_construction():
    game = generate_convex_game(2, 2, 2, seed=2)
    extended = append_dummy_agent(game, n_actions=3)
    assert extended.n_agents == 3
    assert extended.actions_per_agent == (2, 2, 3)
    values = all_coalition_values(extended)
    for mask in range(4):
        assert_allclose(values[mask | 4].v_star, values[mask].v_star)
    assert validate_game(extended) == []


def test_symmetric_pairs():
    game = generate_convex_game(3, 2, 2, seed=6, symmetric_pair=(0, 2))
    assert (0, 2) in symmetric_pairs(game)
    assert symmetric_pairs(random_game) == []


def test_save_and_load(tmp_path):
    path = str(tmp_path / "game.json")
    save_game(random_game, path)
    assert load_game(path) == random_game


@settings(max_examples=20, deadline=None)
@given(
    n_agents=st.integers(1, 3),
    n_states=st.integers(1, 3),
    n_actions=st.integers(1, 3),
    seed=st.integers(0, 2 ** 31 - 2),
)
def test_generator_property(n_agents, n_states, n_actions, seed):
    game = generate_convex_game(n_agents, n_states, n_actions, seed=seed, verify=False)
    assert validate_game(game) == []
    assert check_convexity(game).passed
