# -*- coding: utf-8 -*-
"""
The Shapley-Bellman operator on factored per-agent Q tables, its weight
specifications, fixed-point iteration and the sampled (stochastic
approximation) update.

Each agent's table is indexed by (state, own action). The operator is
defined per joint action; :func:`apply_operator_joint` returns that lifted
form, while :func:`apply_operator` evaluates it at the joint action made
of the agent's own action and the greedy actions of everybody else.
"""
import logging
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np
from sklearn.utils import check_random_state

from .mcg import CheckReport, ConvergenceError, DEFAULT_MAX_ITER

logger = logging.getLogger(__name__)

SPEC_TOL = 1e-12

Sample = namedtuple("Sample", ["state", "joint_action", "reward", "next_state"])
Sample.__doc__ = """One observed transition (s, joint action, R, s')."""


class FactoredQ(object):
    """Per-agent tables Q_i(s, a_i).

    Parameters
    ----------
    tables : list of arrays
        ``tables[i]`` has shape (n_states, n_actions_i).
    """

    def __init__(self, tables):
        self.tables = [np.array(t, dtype=np.float64) for t in tables]
        n_states = {t.shape[0] for t in self.tables}
        if len(n_states) != 1 or any(t.ndim != 2 for t in self.tables):
            raise ValueError("Agent tables must be 2d with a common number of states")

    @classmethod
    def zeros(cls, game):
        return cls.full(game, 0.0)

    @classmethod
    def full(cls, game, value):
        return cls([np.full((game.n_states, a), float(value)) for a in game.actions_per_agent])

    @classmethod
    def random(cls, game, random_state=None, scale=1.0):
        rng = check_random_state(random_state)
        return cls(
            [rng.uniform(-scale, scale, size=(game.n_states, a)) for a in game.actions_per_agent]
        )

    @property
    def n_agents(self):
        return len(self.tables)

    @property
    def n_states(self):
        return self.tables[0].shape[0]

    @property
    def actions_per_agent(self):
        return tuple(t.shape[1] for t in self.tables)

    def copy(self):
        return FactoredQ(self.tables)

    def greedy_actions(self):
        """Greedy own action per agent and state, shape (n_agents, n_states)."""
        return np.vstack([t.argmax(axis=1) for t in self.tables])

    def max_sum(self):
        """sum_i max_{a_i} Q_i(s, a_i) per state."""
        return np.sum([t.max(axis=1) for t in self.tables], axis=0)

    def __sub__(self, other):
        return FactoredQ([a - b for a, b in zip(self.tables, other.tables)])

    def __add__(self, other):
        return FactoredQ([a + b for a, b in zip(self.tables, other.tables)])

    def __repr__(self):
        return "FactoredQ(n_agents=%d, n_states=%d, actions_per_agent=%s)" % (
            self.n_agents,
            self.n_states,
            self.actions_per_agent,
        )


@dataclass
class WeightSpec:
    """The (w, b) pair of the Shapley-Bellman operator.

    ``w[i]`` has shape (n_states, n_actions_i) and ``b`` has shape
    (n_agents, n_states). Only ``b == 0`` satisfies all constraints.
    """

    w: list
    b: np.ndarray

    def __post_init__(self):
        self.w = [np.asarray(wi, dtype=np.float64) for wi in self.w]
        self.b = np.asarray(self.b, dtype=np.float64)


@dataclass
class FixedPointResult:
    """Output of :func:`fixed_point_iterate`."""

    q: FactoredQ
    trace: list = field(default_factory=list)
    state_residuals: list = field(default_factory=list)
    contraction_factor: float = 0.0

    @property
    def n_iter(self):
        return len(self.trace)


def uniform_weight_spec(game):
    """w = 1 / n_agents everywhere, b = 0."""
    n = game.n_agents
    return WeightSpec(
        [np.full((game.n_states, a), 1.0 / n) for a in game.actions_per_agent],
        np.zeros((n, game.n_states)),
    )


def weight_spec_from_alpha(alpha, greedy):
    """Weight spec induced by alpha >= 1.

    Parameters
    ----------
    alpha : list of arrays
        ``alpha[i]`` of shape (n_states, n_actions_i).

    greedy : array (n_agents, n_states)
        Greedy actions; their weight is exactly 1 / n_agents.

    Returns
    -------
    spec : WeightSpec
        ``w_i = 1 / (n_agents * alpha_i)`` off the greedy actions.
    """
    n = len(alpha)
    w = []
    for i, a in enumerate(alpha):
        wi = 1.0 / (n * np.asarray(a, dtype=np.float64))
        wi[np.arange(wi.shape[0]), greedy[i]] = 1.0 / n
        w.append(wi)
    return WeightSpec(w, np.zeros((n, w[0].shape[0])))


def _check_shapes(spec, game):
    if len(spec.w) != game.n_agents or spec.b.shape != (game.n_agents, game.n_states):
        raise ValueError("Weight spec does not match a game of %d agents" % game.n_agents)
    for i, wi in enumerate(spec.w):
        if wi.shape != (game.n_states, game.actions_per_agent[i]):
            raise ValueError(
                "w[%d] must have shape %s, got %s"
                % (i, (game.n_states, game.actions_per_agent[i]), wi.shape)
            )


def _check_q(q, game):
    if q.n_agents != game.n_agents or q.n_states != game.n_states:
        raise ValueError("Q tables do not match a game of %d agents" % game.n_agents)
    if q.actions_per_agent != game.actions_per_agent:
        raise ValueError(
            "Q tables have actions %s, game has %s" % (q.actions_per_agent, game.actions_per_agent)
        )


def contraction_factor(spec, game):
    """delta = gamma * max_s sum_i max_{a_i} w_i(s, a_i)."""
    return game.gamma * float(np.max(np.sum([wi.max(axis=1) for wi in spec.w], axis=0)))


def check_weight_spec(spec, game, greedy_of):
    """Check the constraints a weight spec must satisfy.

    Parameters
    ----------
    spec : WeightSpec

    game : MarkovConvexGame

    greedy_of : FactoredQ
        Tables whose greedy actions must carry weight 1 / n_agents.

    Returns
    -------
    report : CheckReport
        ``details`` has one boolean per constraint (``positive_w``,
        ``nonnegative_b``, ``balanced_b``, ``greedy_weight``,
        ``contraction``) and the contraction factor.
    """
    _check_shapes(spec, game)
    _check_q(greedy_of, game)
    n = game.n_agents

    positive_w = all(bool(np.all(wi > 0)) for wi in spec.w)
    nonnegative_b = bool(np.all(spec.b >= 0))
    with np.errstate(divide="ignore", invalid="ignore"):
        # sum_i b_i / w_i is separable, so its maximum over joint actions
        # is the sum of per-agent maxima
        ratios = [np.abs(spec.b[i][:, None] / spec.w[i]).max(axis=1) for i in range(n)]
    imbalance = float(np.max(np.sum(ratios, axis=0)))
    balanced_b = bool(imbalance <= SPEC_TOL)

    greedy = greedy_of.greedy_actions()
    states = np.arange(game.n_states)
    greedy_gap = max(
        float(np.max(np.abs(spec.w[i][states, greedy[i]] - 1.0 / n))) for i in range(n)
    )
    greedy_weight = greedy_gap <= SPEC_TOL

    factor = contraction_factor(spec, game)
    contraction = bool(factor < 1.0)

    return CheckReport(
        "weight_spec",
        positive_w and nonnegative_b and balanced_b and greedy_weight and contraction,
        {
            "positive_w": positive_w,
            "nonnegative_b": nonnegative_b,
            "balanced_b": balanced_b,
            "b_imbalance": imbalance,
            "greedy_weight": greedy_weight,
            "greedy_weight_gap": greedy_gap,
            "contraction": contraction,
            "contraction_factor": factor,
        },
    )


def _joint_backup(q, game):
    # R(N, s, a) + gamma * E[sum_i max_{a_i} Q_i(s', a_i)], shape (S, |A|)
    return game.global_reward() + game.gamma * (game.transition @ q.max_sum())


def _joint_weights(spec, game):
    # w_i(s, a_i) lifted to joint actions, shape (S, |A|, N)
    components = np.unravel_index(np.arange(game.n_joint_actions), game.actions_per_agent)
    return np.stack([spec.w[i][:, components[i]] for i in range(game.n_agents)], axis=-1)


def apply_operator_joint(q, spec, game):
    """Shapley-Bellman operator at every joint action.

    Returns
    -------
    out : array (n_states, n_joint_actions, n_agents)
        ``w_i(s, a_i) * (R(s, a) + gamma * E[sum_j max Q_j(s')]) - b_i(s)``.
    """
    _check_shapes(spec, game)
    _check_q(q, game)
    backup = _joint_backup(q, game)
    return _joint_weights(spec, game) * backup[:, :, None] - spec.b.T[:, None, :]


def apply_operator(q, spec, game):
    """Shapley-Bellman operator reduced to per-agent (state, own action) tables.

    Agent i's entry (s, a_i) is the operator evaluated at the joint action
    where i plays a_i and every other agent plays its greedy action
    under ``q`` (lowest index on ties).

    Parameters
    ----------
    q : FactoredQ

    spec : WeightSpec

    game : MarkovConvexGame

    Returns
    -------
    out : FactoredQ
    """
    _check_shapes(spec, game)
    _check_q(q, game)
    backup = _joint_backup(q, game)
    greedy = q.greedy_actions()
    n_states = game.n_states
    states = np.arange(n_states)
    tables = []
    for i, n_actions in enumerate(game.actions_per_agent):
        multi_index = [
            np.broadcast_to(greedy[j][:, None], (n_states, n_actions)) for j in range(game.n_agents)
        ]
        multi_index[i] = np.broadcast_to(np.arange(n_actions), (n_states, n_actions))
        ranks = np.ravel_multi_index(multi_index, game.actions_per_agent)
        tables.append(spec.w[i] * backup[states[:, None], ranks] - spec.b[i][:, None])
    return FactoredQ(tables)


def factored_norm(q):
    """max over (s, a) of sum_i |Q_i(s, a_i)|.

    Accepts a :class:`FactoredQ` or a lifted array (n_states,
    n_joint_actions, n_agents) as returned by :func:`apply_operator_joint`.
    """
    if isinstance(q, FactoredQ):
        return float(np.max(np.sum([np.abs(t).max(axis=1) for t in q.tables], axis=0)))
    q = np.asarray(q)
    if q.ndim != 3:
        raise ValueError("Lifted tables must be 3d, got shape %s" % (q.shape,))
    return float(np.abs(q).sum(axis=2).max())


def residual_optimality(q, spec, game):
    """q minus its image under the operator, per agent and entry."""
    return q - apply_operator(q, spec, game)


def fixed_point_iterate(spec, game, tol=1e-8, max_iter=DEFAULT_MAX_ITER, q0=None):
    """Solve the Shapley-Bellman optimality equation by repeated application.

    Parameters
    ----------
    spec : WeightSpec
        Must pass :func:`check_weight_spec` contraction.

    game : MarkovConvexGame

    tol : float, optional (default=1e-8)
        Iteration stops once ``max(1, delta / (1 - delta))`` times the
        last change (in :func:`factored_norm`) is at most ``tol``.

    max_iter : int, optional

    q0 : FactoredQ, optional
        Initial tables, zeros by default.

    Returns
    -------
    result : FixedPointResult

    Raises
    ------
    ValueError
        If the spec is not a contraction.

    ConvergenceError
        If ``max_iter`` applications do not reach the tolerance.
    """
    if tol <= 0:
        raise ValueError("Tolerance must be positive!")
    _check_shapes(spec, game)
    delta = contraction_factor(spec, game)
    if not delta < 1.0:
        raise ValueError(
            "Weight spec is not a contraction: gamma * max_s sum_i max w_i = %g >= 1" % delta
        )
    scale = max(1.0, delta / (1.0 - delta))

    q = FactoredQ.zeros(game) if q0 is None else q0.copy()
    result = FixedPointResult(q, contraction_factor=delta)
    residual = np.inf
    for n_iter in range(1, max_iter + 1):
        q_new = apply_operator(q, spec, game)
        diff = q_new - q
        residual = factored_norm(diff)
        result.trace.append(residual)
        result.state_residuals.append(
            np.sum([np.abs(t).max(axis=1) for t in diff.tables], axis=0)
        )
        q = q_new
        if scale * residual <= tol:
            break
    else:
        raise ConvergenceError(
            "Shapley-Bellman iteration did not converge in %d steps (final residual %g)"
            % (max_iter, residual),
            residual,
            max_iter,
        )
    logger.debug("fixed point reached in %d steps, delta=%g", n_iter, delta)
    result.q = q
    return result


def robbins_monro_step(t, power=1.0):
    """Step size 1 / (t + 1) ** power, with power in (0.5, 1]."""
    if not 0.5 < power <= 1.0:
        raise ValueError("Robbins-Monro steps need power in (0.5, 1], got %r" % power)
    return 1.0 / (t + 1.0) ** power


def stochastic_sbo_update(q, spec, transition_sample, step_size, gamma):
    """One sampled Shapley-Bellman update.

    Every agent moves its entry at (s, a_i) towards
    ``w_i(s, a_i) * (R + gamma * sum_j max Q_j(s')) - b_i(s)``; all other
    entries are left untouched.

    Parameters
    ----------
    q : FactoredQ

    spec : WeightSpec

    transition_sample : Sample or tuple
        ``(state, joint_action, reward, next_state)``; ``next_state`` is
        None for a terminal transition.

    step_size : float
        In [0, 1].

    gamma : float

    Returns
    -------
    q_new : FactoredQ
    """
    if not 0.0 <= step_size <= 1.0:
        raise ValueError("Step size must lie in [0, 1], got %r" % step_size)
    state, joint_action, reward, next_state = transition_sample
    if len(joint_action) != q.n_agents:
        raise ValueError("Joint action has %d entries for %d agents" % (len(joint_action), q.n_agents))
    target = float(reward)
    if next_state is not None:
        target += gamma * sum(t[next_state].max() for t in q.tables)

    q_new = q.copy()
    for i, a in enumerate(joint_action):
        old = q_new.tables[i][state, a]
        goal = spec.w[i][state, a] * target - spec.b[i][state]
        q_new.tables[i][state, a] = old + step_size * (goal - old)
    return q_new
