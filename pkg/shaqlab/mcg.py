# -*- coding: utf-8 -*-
"""
Markov convex games: explicit tabular games, coalition value iteration,
convexity checking and convex instance generation.
"""
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from joblib import Memory, Parallel, delayed
from scipy.linalg import solve
from sklearn.utils import check_array, check_random_state

# License: BSD 3 clause

logger = logging.getLogger(__name__)

MAX_AGENTS = 16
MAX_PERMUTATION_AGENTS = 8
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100000
NULL_ACTION = 0
NORMALIZATION_TOL = 1e-12


class ConvergenceError(RuntimeError):
    """Raised when an iterative solver hits its iteration cap.

    Attributes
    ----------
    residual : float
        The residual of the last iterate.

    n_iter : int
        The number of iterations performed.
    """

    def __init__(self, message, residual, n_iter):
        super().__init__(message)
        self.residual = residual
        self.n_iter = n_iter


@dataclass
class CheckReport:
    """Outcome of a property check. Truthy iff the check passed."""

    name: str
    passed: bool
    details: dict = field(default_factory=dict)

    def __bool__(self):
        return bool(self.passed)


def coalition_members(mask):
    """Sorted tuple of the agents in a coalition bitmask."""
    return tuple(i for i in range(int(mask).bit_length()) if (mask >> i) & 1)


def coalition_mask(members):
    """Bitmask of an iterable of agent indices."""
    mask = 0
    for i in members:
        mask |= 1 << int(i)
    return mask


def grand_coalition(n_agents):
    return (1 << n_agents) - 1


def _as_mask(coalition, n_agents):
    if isinstance(coalition, (int, np.integer)):
        mask = int(coalition)
    else:
        mask = coalition_mask(coalition)
    if mask < 0 or mask > grand_coalition(n_agents):
        raise ValueError(
            "Coalition %r is not a subset of the grand coalition of %d agents"
            % (coalition, n_agents)
        )
    return mask


class MarkovConvexGame(object):
    """A fully tabular Markov game with a coalition reward function.

    Joint actions are ranked mixed-radix with agent 0 as the most
    significant digit; coalition joint actions use the same convention
    over the sorted coalition members. Agents outside a coalition are
    pinned to the null action (index 0) when the coalition is evaluated.

    Parameters
    ----------
    actions_per_agent : sequence of int
        Number of actions of each agent.

    transition : array (n_states, n_joint_actions, n_states)
        Transition kernel Pr(s' | s, a).

    coalition_reward : dict
        Maps a coalition bitmask (int, or its decimal string) to an array
        of shape (n_states, n_coalition_joint_actions). The empty
        coalition may be omitted, in which case it is all zeros. Every
        other coalition must be present.

    gamma : float
        Discount factor.

    Notes
    -----
    Tables are copied and made read-only. Semantic constraints
    (normalisation, nonnegative rewards, gamma range) are not enforced
    here; see :func:`validate_game`.
    """

    def __init__(self, actions_per_agent, transition, coalition_reward, gamma):
        actions_per_agent = tuple(int(a) for a in actions_per_agent)
        n_agents = len(actions_per_agent)
        if n_agents < 1:
            raise ValueError("A game needs at least one agent!")
        if n_agents > MAX_AGENTS:
            raise ValueError(
                "Coalition enumeration is limited to %d agents, got %d"
                % (MAX_AGENTS, n_agents)
            )
        if min(actions_per_agent) < 1:
            raise ValueError("Every agent needs at least one action!")

        transition = check_array(
            transition, ensure_2d=False, allow_nd=True, dtype=np.float64, copy=True
        )
        n_joint = int(np.prod(actions_per_agent))
        if (
            transition.ndim != 3
            or transition.shape[1] != n_joint
            or transition.shape[0] != transition.shape[2]
        ):
            raise ValueError(
                "Transition must have shape (n_states, %d, n_states), got %s"
                % (n_joint, transition.shape)
            )
        transition.setflags(write=False)
        n_states = transition.shape[0]

        self._actions = actions_per_agent
        self._n_states = n_states
        self._transition = transition
        self.gamma = float(gamma)

        given = {int(k): v for k, v in coalition_reward.items()}
        rewards = {}
        for mask in range(1 << n_agents):
            size = self.coalition_action_count(mask)
            if mask not in given:
                if mask == 0:
                    table = np.zeros((n_states, 1))
                else:
                    raise ValueError(
                        "No reward table for coalition %s" % (coalition_members(mask),)
                    )
            else:
                table = np.asarray(given[mask], dtype=np.float64)
                if table.size != n_states * size:
                    raise ValueError(
                        "Reward table of coalition %s must have %d x %d entries, got %d"
                        % (coalition_members(mask), n_states, size, table.size)
                    )
                table = check_array(table.reshape(n_states, size), copy=True)
            table.setflags(write=False)
            rewards[mask] = table
        self._rewards = rewards

    @property
    def n_agents(self):
        return len(self._actions)

    @property
    def n_states(self):
        return self._n_states

    @property
    def actions_per_agent(self):
        return self._actions

    @property
    def n_joint_actions(self):
        return int(np.prod(self._actions))

    @property
    def transition(self):
        return self._transition

    @property
    def coalition_reward(self):
        return dict(self._rewards)

    @property
    def grand_coalition(self):
        return grand_coalition(self.n_agents)

    def coalition_action_shape(self, coalition):
        mask = _as_mask(coalition, self.n_agents)
        return tuple(self._actions[i] for i in coalition_members(mask))

    def coalition_action_count(self, coalition):
        return int(np.prod(self.coalition_action_shape(coalition), dtype=np.int64))

    def reward(self, coalition):
        """Reward table (n_states, n_coalition_joint_actions) of a coalition."""
        return self._rewards[_as_mask(coalition, self.n_agents)]

    def reward_by_member(self, coalition):
        """Reward table with one axis per coalition member."""
        mask = _as_mask(coalition, self.n_agents)
        return self._rewards[mask].reshape(
            (self._n_states,) + self.coalition_action_shape(mask)
        )

    def global_reward(self):
        """R(N, s, a) indexed by (state, joint action rank)."""
        return self._rewards[self.grand_coalition]

    def joint_ranks(self, coalition):
        """Full joint-action ranks of every coalition joint action.

        Agents outside the coalition play ``NULL_ACTION``.
        """
        mask = _as_mask(coalition, self.n_agents)
        members = coalition_members(mask)
        if not members:
            full = np.full((self.n_agents, 1), NULL_ACTION, dtype=np.intp)
        else:
            shape = self.coalition_action_shape(mask)
            grid = np.indices(shape).reshape(len(members), -1)
            full = np.full((self.n_agents, grid.shape[1]), NULL_ACTION, dtype=np.intp)
            full[list(members)] = grid
        return np.ravel_multi_index(full, self._actions)

    def coalition_transition(self, coalition):
        """Transition kernel (S, n_coalition_joint_actions, S) of a coalition."""
        return self._transition[:, self.joint_ranks(coalition), :]

    def joint_action_rank(self, actions):
        return int(np.ravel_multi_index(tuple(int(a) for a in actions), self._actions))

    def joint_action(self, rank):
        return tuple(int(a) for a in np.unravel_index(int(rank), self._actions))

    def __eq__(self, other):
        if not isinstance(other, MarkovConvexGame):
            return NotImplemented
        return (
            self._actions == other._actions
            and self.gamma == other.gamma
            and np.array_equal(self._transition, other._transition)
            and all(
                np.array_equal(self._rewards[m], other._rewards[m]) for m in self._rewards
            )
        )

    __hash__ = None

    def __repr__(self):
        return "MarkovConvexGame(n_agents=%d, n_states=%d, actions_per_agent=%s, gamma=%r)" % (
            self.n_agents,
            self.n_states,
            self._actions,
            self.gamma,
        )


@dataclass
class CoalitionValueTable:
    """Optimal values of one coalition.

    ``q_star`` is indexed by (state, coalition joint action rank) and
    ``greedy_policy`` holds the coalition joint action rank attaining
    ``v_star`` in every state (lowest rank on ties).
    """

    coalition: int
    v_star: np.ndarray
    q_star: np.ndarray
    greedy_policy: np.ndarray
    residual: float = 0.0
    n_iter: int = 0

    @property
    def members(self):
        return coalition_members(self.coalition)


def validate_game(game):
    """List every violated definitional constraint of a game.

    Parameters
    ----------
    game : MarkovConvexGame

    Returns
    -------
    violations : list of str
        Empty iff transition rows are distributions (within 1e-12),
        rewards are nonnegative, gamma lies in (0, 1) and the empty
        coalition earns nothing.
    """
    violations = []
    transition = game.transition
    sums = transition.sum(axis=2)
    for s, a in np.argwhere(np.abs(sums - 1.0) > NORMALIZATION_TOL):
        violations.append(
            "transition row (state=%d, joint_action=%d) sums to %r" % (s, a, sums[s, a])
        )
    for s, a in np.argwhere((transition < 0).any(axis=2)):
        violations.append(
            "transition row (state=%d, joint_action=%d) has negative entries" % (s, a)
        )
    for mask, table in game.coalition_reward.items():
        if mask == 0:
            continue
        if (table < 0).any():
            violations.append(
                "coalition %s has negative rewards (min %r)"
                % (coalition_members(mask), float(table.min()))
            )
    if not 0.0 < game.gamma < 1.0:
        violations.append("gamma %r is outside (0, 1)" % game.gamma)
    if np.any(game.reward(0) != 0):
        violations.append("the empty coalition has nonzero reward")
    return violations


def coalition_value_iteration(
    game,
    coalition,
    tol=DEFAULT_TOL,
    non_member_policy="null",
    max_iter=DEFAULT_MAX_ITER,
):
    """Optimal value of a coalition by value iteration.

    Parameters
    ----------
    game : MarkovConvexGame

    coalition : int or iterable of int
        Bitmask or member list.

    tol : float, optional (default=1e-8)
        Target sup-norm distance to the optimal Q-table. Iteration stops
        once gamma / (1 - gamma) times the last change is below ``tol``.

    non_member_policy : string, optional (default='null')
        Behaviour of agents outside the coalition. Only ``null`` (play
        action 0) is supported.

    max_iter : int, optional (default=100000)

    Returns
    -------
    table : CoalitionValueTable

    Raises
    ------
    ConvergenceError
        If ``max_iter`` sweeps do not reach the tolerance.
    """
    if tol <= 0:
        raise ValueError("Tolerance must be positive!")
    if non_member_policy != "null":
        raise ValueError(
            "Unknown non-member policy %r; only 'null' is supported" % non_member_policy
        )
    mask = _as_mask(coalition, game.n_agents)
    n_states = game.n_states

    if mask == 0:
        return CoalitionValueTable(
            coalition=0,
            v_star=np.zeros(n_states),
            q_star=np.zeros((n_states, 1)),
            greedy_policy=np.zeros(n_states, dtype=np.intp),
        )

    transition = game.coalition_transition(mask)
    reward = game.reward(mask)
    gamma = game.gamma
    stop = tol * (1.0 - gamma) / gamma if gamma > 0 else np.inf

    q = np.zeros_like(reward)
    residual = np.inf
    for n_iter in range(1, max_iter + 1):
        q_new = reward + gamma * (transition @ q.max(axis=1))
        residual = float(np.max(np.abs(q_new - q)))
        q = q_new
        if residual <= stop:
            break
    else:
        raise ConvergenceError(
            "Value iteration for coalition %s did not converge in %d sweeps "
            "(final residual %g)" % (coalition_members(mask), max_iter, residual),
            residual,
            max_iter,
        )

    logger.debug(
        "coalition %s converged in %d sweeps", coalition_members(mask), n_iter
    )
    return CoalitionValueTable(
        coalition=mask,
        v_star=q.max(axis=1),
        q_star=q,
        greedy_policy=q.argmax(axis=1),
        residual=residual,
        n_iter=n_iter,
    )


def joint_value_iteration(game, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Optimal global Q-table Q*(s, a): value iteration on the grand coalition."""
    return coalition_value_iteration(
        game, game.grand_coalition, tol=tol, max_iter=max_iter
    )


def all_coalition_values(game, tol=DEFAULT_TOL, memory=None, n_jobs=1):
    """Value tables of every coalition of a game.

    Parameters
    ----------
    game : MarkovConvexGame

    tol : float, optional (default=1e-8)

    memory : instance of joblib.Memory or string, optional
        Used to cache the value tables. By default, no caching is done.
        If a string is given, it is the path to the caching directory.

    n_jobs : int, optional (default=1)
        Number of parallel jobs over coalitions. Results do not depend
        on it.

    Returns
    -------
    values : dict
        Maps every coalition bitmask to its :class:`CoalitionValueTable`.
    """
    if memory is None:
        memory = Memory(None, verbose=0)
    elif isinstance(memory, str):
        memory = Memory(memory, verbose=0)

    if memory.location is None:
        compute = coalition_value_iteration
    else:
        compute = memory.cache(coalition_value_iteration)

    masks = range(1 << game.n_agents)
    if n_jobs == 1:
        tables = [compute(game, mask, tol) for mask in masks]
    else:
        tables = Parallel(n_jobs=n_jobs)(delayed(compute)(game, mask, tol) for mask in masks)
    return dict(zip(masks, tables))


def coalition_value_matrix(values):
    """Stack optimal coalition values into an array (2**n_agents, n_states)."""
    return np.vstack([values[mask].v_star for mask in range(len(values))])


def check_convexity(game, tol=DEFAULT_TOL, values=None, disjoint_only=False):
    """Check the Markov convex game condition for every coalition pair.

    For all states and coalitions C_m, C_k verifies
    V*(C_m | C_k) + V*(C_m & C_k) >= V*(C_m) + V*(C_k) - tol.

    Parameters
    ----------
    game : MarkovConvexGame

    tol : float, optional (default=1e-8)

    values : dict, optional
        Precomputed output of :func:`all_coalition_values`.

    disjoint_only : bool, optional (default=False)
        Only check disjoint pairs, where the condition reduces to
        superadditivity V*(C_m | C_k) >= V*(C_m) + V*(C_k) - tol.

    Returns
    -------
    report : CheckReport
        On failure ``details`` holds the first violating pair, the state
        and the four optimal values.
    """
    if values is None:
        values = all_coalition_values(game, tol=min(tol, DEFAULT_TOL))
    v = coalition_value_matrix(values)
    masks = np.arange(v.shape[0])
    checked = 0
    for m in range(v.shape[0]):
        union = m | masks
        inter = m & masks
        gap = v[union] + v[inter] - (v[m] + v) + tol
        rows = masks[inter == 0] if disjoint_only else masks
        checked += len(rows)
        bad = np.argwhere(gap[rows] < 0)
        if len(bad):
            k = int(rows[bad[0, 0]])
            s = int(bad[0, 1])
            return CheckReport(
                "convexity",
                False,
                {
                    "state": s,
                    "coalition_m": list(coalition_members(m)),
                    "coalition_k": list(coalition_members(k)),
                    "v_union": float(v[m | k, s]),
                    "v_intersection": float(v[m & k, s]),
                    "v_m": float(v[m, s]),
                    "v_k": float(v[k, s]),
                },
            )
    return CheckReport("convexity", True, {"pairs_checked": checked})


def _subset_sums(dividends, n_agents):
    # zeta transform: f[C] = sum of dividends[T] over T subset of C
    f = dividends.copy()
    for i in range(n_agents):
        bit = 1 << i
        for mask in range(1 << n_agents):
            if mask & bit:
                f[mask] += f[mask ^ bit]
    return f


def _swap_mask(mask, i, j):
    bi = (mask >> i) & 1
    bj = (mask >> j) & 1
    if bi != bj:
        mask ^= (1 << i) | (1 << j)
    return mask


def generate_convex_game(
    n_agents,
    n_states,
    n_actions,
    seed=None,
    gamma=0.9,
    symmetric_pair=None,
    verify=True,
):
    """Random Markov convex game.

    Rewards are R(C, s, a_C) = f_s(C) * prod_{i in C} c_i(s, a_i) where
    f_s(C) sums nonnegative dividends over all nonempty subsets of C
    (a supermodular set function) and c_i equals 1 at one designated
    best action per agent and state, and lies in [0.1, 0.9] elsewhere.
    The transition kernel does not depend on the joint action, so the
    optimal coalition values are a nonnegative linear image of f and
    inherit its supermodularity.

    Parameters
    ----------
    n_agents : int

    n_states : int

    n_actions : int or sequence of int
        Actions per agent.

    seed : None, int or instance of RandomState

    gamma : float, optional (default=0.9)

    symmetric_pair : tuple of two ints, optional
        Make these two agents interchangeable in every reward and
        transition.

    verify : bool, optional (default=True)
        Run :func:`check_convexity` on the result.

    Returns
    -------
    game : MarkovConvexGame
    """
    if n_agents < 1 or n_states < 1:
        raise ValueError("Need at least one agent and one state!")
    if n_agents > MAX_AGENTS:
        raise ValueError(
            "Coalition enumeration is limited to %d agents, got %d" % (MAX_AGENTS, n_agents)
        )
    if np.ndim(n_actions) == 0:
        actions = (int(n_actions),) * n_agents
    else:
        actions = tuple(int(a) for a in n_actions)
    if len(actions) != n_agents:
        raise ValueError("Expected %d action counts, got %d" % (n_agents, len(actions)))

    rng = check_random_state(seed)
    kernel = rng.uniform(size=(n_states, n_states))
    kernel /= kernel.sum(axis=1, keepdims=True)
    n_joint = int(np.prod(actions))
    transition = np.repeat(kernel[:, None, :], n_joint, axis=1)

    n_coalitions = 1 << n_agents
    dividends = rng.uniform(0.1, 1.0, size=(n_coalitions, n_states))
    dividends[0] = 0.0
    best = [rng.randint(a, size=n_states) for a in actions]
    scale = [rng.uniform(0.1, 0.9, size=(n_states, a)) for a in actions]
    for i in range(n_agents):
        scale[i][np.arange(n_states), best[i]] = 1.0

    if symmetric_pair is not None:
        i, j = (int(x) for x in symmetric_pair)
        if i == j or not (0 <= i < n_agents and 0 <= j < n_agents):
            raise ValueError("Invalid symmetric pair %r" % (symmetric_pair,))
        if actions[i] != actions[j]:
            raise ValueError("Symmetric agents need equal action counts!")
        for mask in range(n_coalitions):
            swapped = _swap_mask(mask, i, j)
            if swapped > mask:
                mean = (dividends[mask] + dividends[swapped]) / 2.0
                dividends[mask] = mean
                dividends[swapped] = mean
        scale[j] = scale[i].copy()

    worth = _subset_sums(dividends, n_agents)
    rewards = {0: np.zeros((n_states, 1))}
    for mask in range(1, n_coalitions):
        table = worth[mask][:, None]
        for i in coalition_members(mask):
            table = (table[:, :, None] * scale[i][:, None, :]).reshape(n_states, -1)
        rewards[mask] = table

    game = MarkovConvexGame(actions, transition, rewards, gamma)
    if verify:
        report = check_convexity(game, tol=DEFAULT_TOL)
        if not report.passed:
            raise RuntimeError(
                "Generated game violates the convexity condition: %s" % report.details
            )
    return game


def append_dummy_agent(game, n_actions=2):
    """Append an agent that never affects transitions or rewards.

    The new agent has the highest index; R(C + {d}) = R(C) for every
    coalition C, whatever the dummy plays.
    """
    n_agents = game.n_agents
    if n_agents + 1 > MAX_AGENTS:
        raise ValueError("Cannot exceed %d agents" % MAX_AGENTS)
    dummy_bit = 1 << n_agents
    transition = np.repeat(game.transition, n_actions, axis=1)
    rewards = {}
    for mask, table in game.coalition_reward.items():
        rewards[mask] = table
        rewards[mask | dummy_bit] = np.repeat(table, n_actions, axis=1)
    return MarkovConvexGame(
        game.actions_per_agent + (int(n_actions),), transition, rewards, game.gamma
    )


def symmetric_pairs(game, tol=1e-9):
    """Pairs of agents that are interchangeable in every table of the game.

    Returns
    -------
    pairs : list of (int, int)
    """
    actions = game.actions_per_agent
    n_states = game.n_states
    kernel = game.transition.reshape((n_states,) + actions + (n_states,))
    pairs = []
    for i in range(game.n_agents):
        for j in range(i + 1, game.n_agents):
            if actions[i] != actions[j]:
                continue
            if not np.allclose(kernel, np.swapaxes(kernel, 1 + i, 1 + j), rtol=0, atol=tol):
                continue
            if all(
                _reward_symmetric(game, mask, i, j, tol)
                for mask in range(1 << game.n_agents)
            ):
                pairs.append((i, j))
    return pairs


def _reward_symmetric(game, mask, i, j, tol):
    swapped = _swap_mask(mask, i, j)
    members = coalition_members(mask)
    mapped = [j if m == i else i if m == j else m for m in members]
    order = sorted(mapped)
    axes = [0] + [1 + order.index(m) for m in mapped]
    aligned = np.transpose(game.reward_by_member(swapped), axes)
    return np.allclose(game.reward_by_member(mask), aligned, rtol=0, atol=tol)


def policy_evaluation(game, coalition, policy):
    """Exact value of a deterministic stationary coalition policy.

    Parameters
    ----------
    game : MarkovConvexGame

    coalition : int or iterable of int

    policy : array (n_states,)
        Coalition joint action rank played in each state.

    Returns
    -------
    values : array (n_states,)
    """
    mask = _as_mask(coalition, game.n_agents)
    n_states = game.n_states
    if mask == 0:
        return np.zeros(n_states)
    policy = np.asarray(policy, dtype=np.intp)
    states = np.arange(n_states)
    kernel = game.coalition_transition(mask)[states, policy]
    reward = game.reward(mask)[states, policy]
    return solve(np.eye(n_states) - game.gamma * kernel, reward)


def game_to_dict(game):
    return {
        "n_agents": game.n_agents,
        "n_states": game.n_states,
        "actions_per_agent": list(game.actions_per_agent),
        "gamma": game.gamma,
        "transition": game.transition.tolist(),
        "coalition_reward": {
            str(mask): table.tolist() for mask, table in sorted(game.coalition_reward.items())
        },
    }


def game_from_dict(document):
    try:
        game = MarkovConvexGame(
            document["actions_per_agent"],
            document["transition"],
            document["coalition_reward"],
            document["gamma"],
        )
    except KeyError as e:
        raise ValueError("Game document is missing the %s field" % e)
    if game.n_agents != document.get("n_agents", game.n_agents) or game.n_states != document.get(
        "n_states", game.n_states
    ):
        raise ValueError("Game document sizes do not match its tables")
    return game


def save_game(game, path):
    with open(path, "w") as f:
        json.dump(game_to_dict(game), f, sort_keys=True)


def load_game(path):
    with open(path) as f:
        return game_from_dict(json.load(f))
