# -*- coding: utf-8 -*-
"""
Property checks for Markov Shapley tables: efficiency, dummy agents,
fairness between interchangeable agents, nonnegative marginal
contributions and membership in the Markov core.
"""
from warnings import warn

import numpy as np

from .mcg import (
    CheckReport,
    DEFAULT_TOL,
    all_coalition_values,
    coalition_members,
    joint_value_iteration,
    symmetric_pairs,
)
from .shapley import _marginal_from_values, _predecessors


def check_efficiency(game, table, tol=1e-6, values=None):
    """Check that optimal Shapley payoffs add up to the optimal global value.

    Parameters
    ----------
    game : MarkovConvexGame

    table : ShapleyTable

    tol : float, optional (default=1e-6)

    values : dict, optional
        Precomputed coalition value tables; only the grand coalition is used.

    Returns
    -------
    report : CheckReport
        ``details['residuals']`` holds
        ``|max_a Q*(s, a) - sum_i max_{a_i} q_phi(i, s, a_i)|`` per state.
    """
    if values is not None:
        optimum = values[game.grand_coalition].v_star
    else:
        optimum = joint_value_iteration(game, tol=min(tol, DEFAULT_TOL)).v_star
    residuals = np.abs(optimum - table.optimal_payoff().sum(axis=0))
    worst = int(np.argmax(residuals))
    return CheckReport(
        "efficiency",
        bool(np.all(residuals <= tol)),
        {
            "residuals": residuals.tolist(),
            "max_residual": float(residuals[worst]),
            "worst_state": worst,
        },
    )


def check_dummy(game, table, dummy_agent, tol=1e-9):
    """Check that an agent known to be a dummy gets zero Shapley value.

    The caller asserts the agent is a dummy, e.g. one appended with
    :func:`shaqlab.mcg.append_dummy_agent`.
    """
    if not 0 <= dummy_agent < game.n_agents:
        raise ValueError("Agent %d out of range for %d agents" % (dummy_agent, game.n_agents))
    values = np.abs(table.v_phi[dummy_agent])
    return CheckReport(
        "dummy",
        bool(np.all(values <= tol)),
        {"agent": int(dummy_agent), "max_abs_value": float(values.max())},
    )


def check_fairness(game, table, tol=1e-9, pairs=None):
    """Check that interchangeable agents receive equal Shapley values.

    Parameters
    ----------
    game : MarkovConvexGame

    table : ShapleyTable

    tol : float, optional (default=1e-9)

    pairs : list of (int, int), optional
        Pairs symmetric by construction. Detected from the game tables
        with :func:`shaqlab.mcg.symmetric_pairs` when omitted.

    Returns
    -------
    report : CheckReport
        Passes vacuously, with a warning, if there is no symmetric pair.
    """
    if pairs is None:
        pairs = symmetric_pairs(game)
    if not pairs:
        warn("No symmetric agent pair in this game; fairness holds vacuously.")
        return CheckReport("fairness", True, {"pairs": [], "vacuous": True})

    gaps = []
    for i, j in pairs:
        gaps.append(float(np.max(np.abs(table.v_phi[i] - table.v_phi[j]))))
    return CheckReport(
        "fairness",
        all(gap <= tol for gap in gaps),
        {"pairs": [list(p) for p in pairs], "gaps": gaps, "vacuous": False},
    )


def check_marginal_nonnegativity(game, tol=1e-6, values=None):
    """Check max over own actions of every marginal contribution is >= -tol.

    Holds for every agent and predecessor coalition of a convex game.
    """
    if values is None:
        values = all_coalition_values(game)
    for i in range(game.n_agents):
        for mask in _predecessors(game.n_agents, i):
            best = _marginal_from_values(game, values, i, mask).phi_q.max(axis=1)
            if np.any(best < -tol):
                s = int(np.argmin(best))
                return CheckReport(
                    "marginal_nonnegativity",
                    False,
                    {
                        "agent": i,
                        "predecessor": list(coalition_members(mask)),
                        "state": s,
                        "value": float(best[s]),
                    },
                )
    return CheckReport("marginal_nonnegativity", True, {})


def check_markov_core(game, table, tol=1e-6, values=None, singletons_only=False):
    """Check that the optimal Shapley payoffs lie in the Markov core.

    For every coalition C and state s verifies
    ``sum_{i in C} v_phi(i, s) >= V*(C, s) - tol``.

    Parameters
    ----------
    game : MarkovConvexGame

    table : ShapleyTable

    tol : float, optional (default=1e-6)

    values : dict, optional
        Precomputed coalition value tables.

    singletons_only : bool, optional (default=False)
        Only test single-agent coalitions.

    Returns
    -------
    report : CheckReport
        On failure ``details`` names the first violating coalition and state.
    """
    if values is None:
        values = all_coalition_values(game)
    if singletons_only:
        masks = [1 << i for i in range(game.n_agents)]
    else:
        masks = range(1, 1 << game.n_agents)

    for mask in masks:
        members = list(coalition_members(mask))
        payoff = table.v_phi[members].sum(axis=0)
        optimum = values[mask].v_star
        bad = np.flatnonzero(payoff < optimum - tol)
        if len(bad):
            s = int(bad[0])
            return CheckReport(
                "markov_core",
                False,
                {
                    "coalition": members,
                    "state": s,
                    "payoff": float(payoff[s]),
                    "coalition_value": float(optimum[s]),
                },
            )
    return CheckReport("markov_core", True, {"coalitions_checked": len(masks)})
