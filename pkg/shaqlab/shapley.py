# -*- coding: utf-8 -*-
"""
Coalition marginal contributions and Markov Shapley values, exact and
sampled from uniform permutations of the agents.
"""
import json
import logging
from dataclasses import dataclass
from itertools import permutations
from warnings import warn

import numpy as np
from scipy.special import factorial
from sklearn.utils import check_random_state

from .mcg import (
    DEFAULT_TOL,
    MAX_PERMUTATION_AGENTS,
    _as_mask,
    all_coalition_values,
    coalition_members,
    coalition_value_iteration,
)

logger = logging.getLogger(__name__)

MAX_EXACT_AGENTS = 12


@dataclass
class MarginalContribution:
    """Value an agent adds to a predecessor coalition by joining it.

    ``phi_v`` is indexed by state, ``phi_q`` by (state, own action).
    """

    agent: int
    predecessor: int
    phi_v: np.ndarray
    phi_q: np.ndarray


@dataclass
class ShapleyTable:
    """Per-agent Markov Shapley values.

    Attributes
    ----------
    q_phi : list of arrays
        ``q_phi[i]`` has shape (n_states, n_actions_i).

    v_phi : array (n_agents, n_states)
        Optimal Markov Shapley value of each agent.

    mode : string
        One of ``exact``, ``permutation`` or ``sampled``.

    M : int or None
        Number of sampled permutations (sampled mode only).

    seed : int or None
        Master seed (sampled mode only).
    """

    q_phi: list
    v_phi: np.ndarray
    mode: str = "exact"
    M: int = None
    seed: int = None

    @property
    def n_agents(self):
        return len(self.q_phi)

    def optimal_payoff(self):
        """max over own actions of q_phi, shape (n_agents, n_states)."""
        return np.vstack([q.max(axis=1) for q in self.q_phi])

    def greedy_actions(self):
        """Greedy own action per agent and state (lowest index on ties)."""
        return np.vstack([q.argmax(axis=1) for q in self.q_phi])

    def copy(self):
        return ShapleyTable(
            [q.copy() for q in self.q_phi], self.v_phi.copy(), self.mode, self.M, self.seed
        )


def coalition_weight(n_agents, coalition_size):
    """Probability |C|! (n - |C| - 1)! / n! of a predecessor coalition.

    Parameters
    ----------
    n_agents : int

    coalition_size : int
        Size of the predecessor coalition, in [0, n_agents - 1].

    Returns
    -------
    weight : float
    """
    if n_agents < 1:
        raise ValueError("n_agents must be at least 1, got %d" % n_agents)
    if not 0 <= coalition_size <= n_agents - 1:
        raise ValueError(
            "Predecessor coalition size must lie in [0, %d], got %d"
            % (n_agents - 1, coalition_size)
        )
    return (
        factorial(coalition_size, exact=True)
        * factorial(n_agents - coalition_size - 1, exact=True)
        / factorial(n_agents, exact=True)
    )


def _best_response_values(game, q_star, mask, agent):
    # max of a coalition Q table over every member action except the agent's
    members = coalition_members(mask)
    shape = (game.n_states,) + game.coalition_action_shape(mask)
    position = 1 + members.index(agent)
    q = np.moveaxis(q_star.reshape(shape), position, -1)
    return q.reshape(game.n_states, -1, shape[position]).max(axis=1)


def _marginal_from_values(game, values, agent, predecessor):
    joined = predecessor | (1 << agent)
    with_agent = values[joined]
    without = values[predecessor]
    phi_v = with_agent.v_star - without.v_star
    phi_q = _best_response_values(game, with_agent.q_star, joined, agent) - without.v_star[:, None]
    return MarginalContribution(agent, predecessor, phi_v, phi_q)


def _check_agent(game, agent):
    if not 0 <= agent < game.n_agents:
        raise ValueError("Agent %d out of range for %d agents" % (agent, game.n_agents))


def marginal_contribution(game, agent, predecessor, tol=DEFAULT_TOL, values=None):
    """Coalition marginal contribution of an agent.

    Parameters
    ----------
    game : MarkovConvexGame

    agent : int

    predecessor : int or iterable of int
        Coalition the agent joins; must not contain the agent.

    tol : float, optional (default=1e-8)
        Value iteration tolerance.

    values : dict, optional
        Precomputed output of :func:`shaqlab.mcg.all_coalition_values`.

    Returns
    -------
    contribution : MarginalContribution
        ``phi_v(s) = V*(C + i, s) - V*(C, s)`` and
        ``phi_q(s, a_i) = max_{a_C} Q*(C + i, s, a_C, a_i) - V*(C, s)``.
    """
    _check_agent(game, agent)
    mask = _as_mask(predecessor, game.n_agents)
    if mask & (1 << agent):
        raise ValueError("Agent %d is a member of its predecessor coalition" % agent)
    if values is None:
        joined = mask | (1 << agent)
        values = {
            mask: coalition_value_iteration(game, mask, tol),
            joined: coalition_value_iteration(game, joined, tol),
        }
    return _marginal_from_values(game, values, agent, mask)


def _predecessors(n_agents, agent):
    bit = 1 << agent
    return [mask for mask in range(1 << n_agents) if not mask & bit]


def markov_shapley_table_exact(game, tol=DEFAULT_TOL, values=None, memory=None, n_jobs=1):
    """Exact Markov Shapley values by the weighted sum over predecessor coalitions.

    Parameters
    ----------
    game : MarkovConvexGame
        At most 12 agents.

    tol : float, optional (default=1e-8)

    values : dict, optional
        Precomputed coalition value tables.

    memory : instance of joblib.Memory or string, optional
        Cache for the coalition value tables.

    n_jobs : int, optional (default=1)
        Parallel jobs used for the coalition value tables.

    Returns
    -------
    table : ShapleyTable
    """
    n_agents = game.n_agents
    if n_agents > MAX_EXACT_AGENTS:
        raise ValueError(
            "Exact Shapley tables are limited to %d agents, got %d"
            % (MAX_EXACT_AGENTS, n_agents)
        )
    if values is None:
        values = all_coalition_values(game, tol=tol, memory=memory, n_jobs=n_jobs)

    q_phi = []
    v_phi = np.zeros((n_agents, game.n_states))
    for i in range(n_agents):
        q = np.zeros((game.n_states, game.actions_per_agent[i]))
        for mask in _predecessors(n_agents, i):
            weight = coalition_weight(n_agents, bin(mask).count("1"))
            contribution = _marginal_from_values(game, values, i, mask)
            q += weight * contribution.phi_q
            v_phi[i] += weight * contribution.phi_v
        q_phi.append(q)
    return ShapleyTable(q_phi, v_phi, mode="exact")


def _average_over_orderings(game, values, orderings, agent, n_orderings):
    q = np.zeros((game.n_states, game.actions_per_agent[agent]))
    v = np.zeros(game.n_states)
    cache = {}
    for order in orderings:
        order = list(order)
        mask = 0
        for j in order[: order.index(agent)]:
            mask |= 1 << int(j)
        if mask not in cache:
            cache[mask] = _marginal_from_values(game, values, agent, mask)
        q += cache[mask].phi_q
        v += cache[mask].phi_v
    return q / n_orderings, v / n_orderings


def markov_shapley_table_permutation(game, tol=DEFAULT_TOL, values=None):
    """Markov Shapley values averaged over every ordering of the agents.

    Limited to 8 agents (8! orderings).
    """
    n_agents = game.n_agents
    if n_agents > MAX_PERMUTATION_AGENTS:
        raise ValueError(
            "Permutation enumeration is limited to %d agents, got %d"
            % (MAX_PERMUTATION_AGENTS, n_agents)
        )
    if values is None:
        values = all_coalition_values(game, tol=tol)
    n_orderings = factorial(n_agents, exact=True)
    q_phi = []
    v_phi = np.zeros((n_agents, game.n_states))
    for i in range(n_agents):
        q, v_phi[i] = _average_over_orderings(
            game, values, permutations(range(n_agents)), i, n_orderings
        )
        q_phi.append(q)
    return ShapleyTable(q_phi, v_phi, mode="permutation")


def markov_shapley_table_sampled(game, M, seed=None, tol=DEFAULT_TOL, values=None):
    """Unbiased Monte-Carlo Markov Shapley values.

    Each agent draws ``M`` uniform permutations of the agents from its own
    random stream (derived from ``seed``) and averages its marginal
    contributions to the agents preceding it.

    Parameters
    ----------
    game : MarkovConvexGame

    M : int
        Permutations per agent, at least 1.

    seed : None or int, optional

    tol : float, optional (default=1e-8)

    values : dict, optional
        Precomputed coalition value tables.

    Returns
    -------
    table : ShapleyTable
    """
    if M < 1:
        raise ValueError("M must be at least 1, got %d" % M)
    n_agents = game.n_agents
    if n_agents <= MAX_PERMUTATION_AGENTS and M > factorial(n_agents, exact=True):
        warn(
            "Sampling %d permutations of %d agents; the exact table enumerates "
            "only %d orderings." % (M, n_agents, factorial(n_agents, exact=True))
        )
    if values is None:
        values = all_coalition_values(game, tol=tol)

    master = check_random_state(seed)
    agent_seeds = master.randint(np.iinfo(np.int32).max, size=n_agents)
    q_phi = []
    v_phi = np.zeros((n_agents, game.n_states))
    for i in range(n_agents):
        rng = np.random.RandomState(agent_seeds[i])
        orderings = (rng.permutation(n_agents) for _ in range(M))
        q, v_phi[i] = _average_over_orderings(game, values, orderings, i, M)
        q_phi.append(q)
    return ShapleyTable(q_phi, v_phi, mode="sampled", M=int(M), seed=seed)


def shapley_table_to_dict(table):
    document = {
        "mode": table.mode,
        "q_phi": [q.tolist() for q in table.q_phi],
        "v_phi": table.v_phi.tolist(),
    }
    if table.mode == "sampled":
        document["M"] = table.M
        document["seed"] = table.seed
    return document


def shapley_table_from_dict(document):
    return ShapleyTable(
        [np.asarray(q, dtype=np.float64) for q in document["q_phi"]],
        np.asarray(document["v_phi"], dtype=np.float64),
        mode=document.get("mode", "exact"),
        M=document.get("M"),
        seed=document.get("seed"),
    )


def save_shapley_table(table, path, **provenance):
    document = shapley_table_to_dict(table)
    document.update(provenance)
    with open(path, "w") as f:
        json.dump(document, f, sort_keys=True)


def load_shapley_table(path):
    with open(path) as f:
        return shapley_table_from_dict(json.load(f))
