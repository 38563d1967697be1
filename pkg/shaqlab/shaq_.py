# -*- coding: utf-8 -*-
"""
Shapley Q-learning with per-agent lookup tables.

The team value of a joint action is modelled as sum_i delta_i * Q_i where
delta_i is 1 at agent i's greedy action and alpha_i >= 1 elsewhere.
alpha_i is estimated from coalitions of predecessors sampled through
uniform permutations of the agents. With ``algo='vdn'`` every delta is 1,
which is plain additive value decomposition.
"""
import copy
import json
import logging
from collections import deque, namedtuple
from dataclasses import dataclass, field
from types import SimpleNamespace
from warnings import warn

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator
from sklearn.utils import check_random_state

from .environments import rollout
from .shapley import coalition_weight

logger = logging.getLogger(__name__)

MAX_SEED = np.iinfo(np.int32).max

Transition = namedtuple(
    "Transition",
    [
        "state",
        "observations",
        "actions",
        "reward",
        "next_state",
        "next_observations",
        "terminal",
    ],
)
Transition.__doc__ = """One step of experience; observations are per-agent keys."""


class QTable(object):
    """Sparse table of action values keyed by observation; unseen rows are zero."""

    def __init__(self, n_actions, rows=None):
        self.n_actions = int(n_actions)
        self.rows = {} if rows is None else rows

    def __getitem__(self, key):
        row = self.rows.get(key)
        if row is None:
            row = np.zeros(self.n_actions)
            self.rows[key] = row
        return row

    def peek(self, key):
        row = self.rows.get(key)
        return np.zeros(self.n_actions) if row is None else row

    def __len__(self):
        return len(self.rows)

    def copy(self):
        return QTable(self.n_actions, {k: v.copy() for k, v in self.rows.items()})


class EpsilonSchedule(object):
    """Linear annealing from ``start`` to ``finish`` over ``anneal_steps``."""

    def __init__(self, start=1.0, finish=0.05, anneal_steps=50000):
        if not 0.0 <= finish <= 1.0 or not 0.0 <= start <= 1.0:
            raise ValueError("Exploration rates must lie in [0, 1]")
        if anneal_steps < 0:
            raise ValueError("anneal_steps must be nonnegative")
        self.start = start
        self.finish = finish
        self.anneal_steps = anneal_steps

    def value(self, step):
        if self.anneal_steps == 0 or step >= self.anneal_steps:
            return self.finish
        return self.start + (self.finish - self.start) * step / self.anneal_steps


class ReplayBuffer(object):
    """FIFO store of whole episodes.

    Parameters
    ----------
    capacity : int
        Maximum number of episodes; the oldest is evicted first.
    """

    def __init__(self, capacity):
        if capacity < 1:
            raise ValueError("Replay buffer capacity must be at least 1")
        self.capacity = int(capacity)
        self.episodes = deque(maxlen=self.capacity)

    def __len__(self):
        return len(self.episodes)

    def add(self, episode):
        self.episodes.append(list(episode))

    def sample(self, batch_size, random_state):
        """Transitions of up to ``batch_size`` distinct episodes drawn uniformly."""
        if not self.episodes:
            warn("Sampling from an empty replay buffer.")
            return []
        n = min(batch_size, len(self.episodes))
        chosen = random_state.choice(len(self.episodes), size=n, replace=False)
        return [t for index in chosen for t in self.episodes[index]]


def sample_predecessors(n_agents, M, random_state, batch_size=1):
    """Predecessor coalitions drawn from uniform permutations.

    Returns
    -------
    masks : array (batch_size, n_agents, M)
        ``masks[b, i, k]`` is the bitmask of the agents placed before
        agent i in the k-th permutation of sample b.
    """
    keys = random_state.uniform(size=(batch_size, M, n_agents))
    position = np.argsort(np.argsort(keys, axis=-1), axis=-1)
    before = position[..., None, :] < position[..., :, None]
    masks = (before * (1 << np.arange(n_agents, dtype=np.int64))).sum(axis=-1)
    return np.transpose(masks, (0, 2, 1))


def _membership(masks, n_agents):
    return ((masks[..., None] >> np.arange(n_agents)) & 1).astype(np.float64)


class AlphaModel(object):
    """alpha(s, i) = 1 + mean over sampled coalitions of F(mean coalition Q, Q_i).

    F(x, y) = | |l0| x + |l1| y + l2 | is nonnegative, so alpha >= 1. One
    parameter triple is kept per global state key.

    Parameters
    ----------
    n_agents : int

    M : int, optional (default=10)
        Sampled coalitions per estimate.

    init : string, optional (default='uniform')
        ``uniform`` draws parameters in [0.01, 0.1); ``zeros`` gives
        alpha = 1 until trained.

    random_state : None, int or instance of RandomState
    """

    def __init__(self, n_agents, M=10, init="uniform", random_state=None):
        if M < 1:
            raise ValueError("M must be at least 1, got %d" % M)
        if init not in ("uniform", "zeros"):
            raise ValueError("Unknown initialisation %r" % init)
        self.n_agents = n_agents
        self.M = M
        self.init = init
        self.random_state = check_random_state(random_state)
        self.parameters = {}

    def params(self, key):
        theta = self.parameters.get(key)
        if theta is None:
            if self.init == "uniform":
                theta = self.random_state.uniform(0.01, 0.1, size=3)
            else:
                theta = np.zeros(3)
            self.parameters[key] = theta
        return theta

    def set_params(self, key, theta):
        self.parameters[key] = np.asarray(theta, dtype=np.float64).copy()

    def update(self, key, step):
        self.parameters[key] = self.params(key) + step

    def F(self, key, x, y):
        l0, l1, l2 = self.params(key)
        return np.abs(abs(l0) * np.asarray(x) + abs(l1) * np.asarray(y) + l2)

    def alpha(self, key, agent, q_values, predecessors):
        """alpha for one agent given explicit predecessor bitmasks.

        Parameters
        ----------
        key : hashable
            Global state key.

        agent : int

        q_values : array (n_agents,)
            Q value of each agent's chosen action.

        predecessors : sequence of int
            Predecessor coalition bitmasks, one per sample.
        """
        q_values = np.asarray(q_values, dtype=np.float64)
        membership = _membership(np.asarray(predecessors, dtype=np.int64), self.n_agents)
        count = np.maximum(membership.sum(axis=-1), 1.0)
        x = membership @ q_values / count
        return 1.0 + float(np.mean(self.F(key, x, q_values[agent])))

    def expected_alpha(self, key, agent, q_values):
        """Exact expectation of alpha over the predecessor coalition distribution."""
        q_values = np.asarray(q_values, dtype=np.float64)
        n = self.n_agents
        total = 0.0
        for mask in range(1 << n):
            if mask & (1 << agent):
                continue
            members = [j for j in range(n) if mask >> j & 1]
            x = q_values[members].mean() if members else 0.0
            total += coalition_weight(n, len(members)) * float(self.F(key, x, q_values[agent]))
        return 1.0 + total


@dataclass
class LearnerState:
    """Everything a learner mutates while training."""

    q_tables: list
    target_tables: list
    alpha_model: AlphaModel
    buffer: ReplayBuffer
    epsilon: EpsilonSchedule
    rng: np.random.RandomState
    step_count: int = 0
    episode_count: int = 0
    update_count: int = 0
    last_target_update: int = 0


@dataclass
class LossGradients:
    """Squared TD loss of a batch and its gradients.

    ``q_grads[i]`` maps (observation key, action) to a gradient entry of
    agent i's table; ``alpha_grads`` maps a state key to the gradient of
    its three F parameters.
    """

    loss: float
    td_errors: np.ndarray
    q_grads: list
    alpha_grads: dict = field(default_factory=dict)


@dataclass
class TrainingRecord:
    """One row per evaluation point."""

    n_agents: int
    rows: list = field(default_factory=list)

    def to_frame(self):
        columns = ["step", "episodes", "epsilon", "loss", "eval_median_return"] + [
            "eval_q_agent_%d" % i for i in range(self.n_agents)
        ]
        return pd.DataFrame(self.rows, columns=columns)


class ShapleyQLearner(BaseEstimator):
    """Tabular Shapley Q-learning.

    Parameters
    ----------
    algo : string, optional (default='shaq')
        ``shaq`` or ``vdn`` (every delta fixed to 1).

    M : int, optional (default=10)
        Sampled predecessor coalitions per alpha estimate.

    gamma : float, optional (default=0.99)

    lr_q : float, optional (default=0.0005)
        Step size on the Q tables.

    lr_alpha : float, optional (default=0.001)
        Step size on the alpha parameters.

    buffer_size : int, optional (default=5000)
        Replay capacity in episodes.

    batch_size : int, optional (default=32)
        Episodes per update.

    target_update_interval : int, optional (default=200)
        Environment steps between target table refreshes.

    epsilon_start, epsilon_finish : float, optional (default=1.0, 0.05)

    epsilon_anneal_steps : int, optional (default=50000)

    t_max : int, optional (default=50000)
        Environment steps to train for.

    eval_interval : int, optional (default=1000)
        Environment steps between greedy evaluations.

    eval_episodes : int, optional (default=5)

    updates_per_episode : int, optional (default=1)

    q_update : string, optional (default='batch')
        ``batch`` follows the gradient of the batch mean loss; ``entry``
        averages each table entry's step over its own occurrences in the
        batch, so ``lr_q`` is a per-entry rate in (0, 0.5].

    alpha_init : string, optional (default='uniform')

    random_state : None, int or instance of RandomState, optional

    Attributes
    ----------
    q_tables_ : list of QTable

    record_ : TrainingRecord
        Available after ``fit``.
    """

    def __init__(
        self,
        algo="shaq",
        M=10,
        gamma=0.99,
        lr_q=0.0005,
        lr_alpha=0.001,
        buffer_size=5000,
        batch_size=32,
        target_update_interval=200,
        epsilon_start=1.0,
        epsilon_finish=0.05,
        epsilon_anneal_steps=50000,
        t_max=50000,
        eval_interval=1000,
        eval_episodes=5,
        updates_per_episode=1,
        q_update="batch",
        alpha_init="uniform",
        random_state=None,
    ):
        self.algo = algo
        self.M = M
        self.gamma = gamma
        self.lr_q = lr_q
        self.lr_alpha = lr_alpha
        self.buffer_size = buffer_size
        self.batch_size = batch_size
        self.target_update_interval = target_update_interval
        self.epsilon_start = epsilon_start
        self.epsilon_finish = epsilon_finish
        self.epsilon_anneal_steps = epsilon_anneal_steps
        self.t_max = t_max
        self.eval_interval = eval_interval
        self.eval_episodes = eval_episodes
        self.updates_per_episode = updates_per_episode
        self.q_update = q_update
        self.alpha_init = alpha_init
        self.random_state = random_state

    def _validate_params(self):
        if self.algo not in ("shaq", "vdn"):
            raise ValueError("Unknown algorithm %r; choose 'shaq' or 'vdn'" % self.algo)
        if self.M < 1:
            raise ValueError("M must be at least 1, got %d" % self.M)
        if self.q_update not in ("batch", "entry"):
            raise ValueError("q_update must be 'batch' or 'entry', got %r" % self.q_update)
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1], got %r" % self.gamma)
        if self.lr_q < 0 or self.lr_alpha < 0:
            raise ValueError("Learning rates must be nonnegative")
        if self.batch_size < 1 or self.target_update_interval < 1:
            raise ValueError("batch_size and target_update_interval must be positive")
        if self.eval_interval < 1 or self.eval_episodes < 1:
            raise ValueError("eval_interval and eval_episodes must be positive")

    def initialize(self, env):
        """Create fresh tables for an environment's agents and actions."""
        self._validate_params()
        rng = check_random_state(self.random_state)
        # alpha initialisation draws from its own stream
        alpha_rng = np.random.RandomState(rng.randint(MAX_SEED))
        actions = tuple(env.actions_per_agent)
        q_tables = [QTable(a) for a in actions]
        self.actions_per_agent_ = actions
        self.state_ = LearnerState(
            q_tables=q_tables,
            target_tables=[t.copy() for t in q_tables],
            alpha_model=AlphaModel(
                len(actions), M=self.M, init=self.alpha_init, random_state=alpha_rng
            ),
            buffer=ReplayBuffer(self.buffer_size),
            epsilon=EpsilonSchedule(
                self.epsilon_start, self.epsilon_finish, self.epsilon_anneal_steps
            ),
            rng=rng,
        )
        return self

    def _check_initialized(self):
        if not hasattr(self, "state_"):
            raise AttributeError(
                "Learner has not been initialized; call initialize or fit first."
            )
        return self.state_

    @property
    def n_agents_(self):
        return len(self._check_initialized().q_tables)

    @property
    def q_tables_(self):
        return self._check_initialized().q_tables

    def select_action(self, agent, obs_key, explore=True):
        """Epsilon-greedy action; greedy ties go to the lowest index."""
        state = self._check_initialized()
        row = state.q_tables[agent].peek(obs_key)
        if explore and state.rng.uniform() < state.epsilon.value(state.step_count):
            return int(state.rng.randint(len(row)))
        return int(np.argmax(row))

    def greedy_joint_action(self, observations):
        return tuple(self.select_action(i, o, explore=False) for i, o in enumerate(observations))

    def _chosen_values(self, observations, joint_action):
        tables = self._check_initialized().q_tables
        return np.array([tables[i].peek(o)[a] for i, (o, a) in enumerate(zip(observations, joint_action))])

    def alpha_hat(self, state_key, agent, joint_action, observations, predecessors=None):
        """alpha of an agent at a joint action; always >= 1.

        ``predecessors`` are ``M`` bitmasks; drawn from the learner's
        stream when omitted.
        """
        state = self._check_initialized()
        if predecessors is None:
            predecessors = sample_predecessors(self.n_agents_, self.M, state.rng)[0, agent]
        q_values = self._chosen_values(observations, joint_action)
        return state.alpha_model.alpha(state_key, agent, q_values, predecessors)

    def delta_hat(self, state_key, agent, joint_action, observations, predecessors=None):
        """1 at the agent's greedy action (and always for VDN), alpha otherwise."""
        state = self._check_initialized()
        greedy = int(np.argmax(state.q_tables[agent].peek(observations[agent])))
        if self.algo == "vdn" or joint_action[agent] == greedy:
            return 1.0
        return self.alpha_hat(state_key, agent, joint_action, observations, predecessors)

    def loss_and_gradients(self, batch, predecessors=None):
        """Mean squared TD error of a batch with analytic gradients.

        The target uses the target tables and drops the bootstrap term at
        terminal transitions. Which actions are greedy is held fixed.

        Parameters
        ----------
        batch : list of Transition

        predecessors : array (len(batch), n_agents, M), optional
            Predecessor bitmasks; sampled when omitted.

        Returns
        -------
        result : LossGradients
        """
        state = self._check_initialized()
        n_agents = self.n_agents_
        size = len(batch)
        q = np.empty((size, n_agents))
        non_greedy = np.zeros((size, n_agents), dtype=bool)
        y = np.empty(size)
        for b, t in enumerate(batch):
            for i in range(n_agents):
                row = state.q_tables[i].peek(t.observations[i])
                q[b, i] = row[t.actions[i]]
                non_greedy[b, i] = t.actions[i] != int(np.argmax(row))
            y[b] = t.reward
            if not t.terminal:
                y[b] += self.gamma * sum(
                    state.target_tables[i].peek(t.next_observations[i]).max()
                    for i in range(n_agents)
                )

        alpha_grads = {}
        if self.algo == "vdn":
            errors = y - q.sum(axis=1)
            d_pred_d_q = np.ones_like(q)
        else:
            if predecessors is None:
                predecessors = sample_predecessors(n_agents, self.M, state.rng, size)
            predecessors = np.asarray(predecessors, dtype=np.int64)
            theta = np.array([state.alpha_model.params(t.state) for t in batch])
            l0 = np.abs(theta[:, 0])[:, None, None]
            l1 = np.abs(theta[:, 1])[:, None, None]
            l2 = theta[:, 2][:, None, None]

            membership = _membership(predecessors, n_agents)  # (B, N, M, N)
            inv_count = 1.0 / np.maximum(membership.sum(axis=-1), 1.0)
            x = (membership * q[:, None, None, :]).sum(axis=-1) * inv_count
            z = l0 * x + l1 * q[:, :, None] + l2
            sign = np.sign(z)
            alpha = 1.0 + np.abs(z).mean(axis=-1)
            delta = np.where(non_greedy, alpha, 1.0)
            errors = y - (delta * q).sum(axis=1)

            # pred = sum_i delta_i q_i; alpha_i depends on the q of its
            # sampled coalition members and on its own q
            coefficient = non_greedy * q
            d_alpha_d_q = l0 * (sign[..., None] * membership * inv_count[..., None]).mean(axis=2)
            diagonal = np.arange(n_agents)
            d_alpha_d_q[:, diagonal, diagonal] += l1[:, :, 0] * sign.mean(axis=-1)
            d_pred_d_q = delta + np.einsum("bi,bim->bm", coefficient, d_alpha_d_q)

            d_alpha_d_theta = np.stack(
                [
                    (sign * x).mean(axis=-1) * np.sign(theta[:, 0])[:, None],
                    sign.mean(axis=-1) * q * np.sign(theta[:, 1])[:, None],
                    sign.mean(axis=-1),
                ],
                axis=-1,
            )
            d_pred_d_theta = np.einsum("bi,bik->bk", coefficient, d_alpha_d_theta)
            theta_grads = -2.0 * errors[:, None] * d_pred_d_theta / size
            for b, t in enumerate(batch):
                alpha_grads[t.state] = alpha_grads.get(t.state, 0.0) + theta_grads[b]

        q_step = -2.0 * errors[:, None] * d_pred_d_q / size
        q_grads = [dict() for _ in range(n_agents)]
        for b, t in enumerate(batch):
            for i in range(n_agents):
                entry = (t.observations[i], t.actions[i])
                q_grads[i][entry] = q_grads[i].get(entry, 0.0) + q_step[b, i]

        return LossGradients(float(np.mean(errors ** 2)), errors, q_grads, alpha_grads)

    def td_error(self, transition, predecessors=None):
        """TD error of a single transition."""
        if predecessors is not None:
            predecessors = np.asarray(predecessors)[None]
        return float(self.loss_and_gradients([transition], predecessors).td_errors[0])

    def train_step(self, batch, predecessors=None):
        """One gradient step on the batch; returns the loss before the step."""
        state = self._check_initialized()
        if not batch:
            warn("Empty batch; no update performed.")
            return 0.0
        result = self.loss_and_gradients(batch, predecessors)
        scale = [{} for _ in result.q_grads]
        if self.q_update == "entry":
            for t in batch:
                for i, entry in enumerate(zip(t.observations, t.actions)):
                    scale[i][entry] = scale[i].get(entry, 0) + 1
            scale = [{k: len(batch) / c for k, c in counts.items()} for counts in scale]
        for table, grads, factors in zip(state.q_tables, result.q_grads, scale):
            for (obs, action), g in grads.items():
                table[obs][action] -= self.lr_q * factors.get((obs, action), 1.0) * g
        for key, g in result.alpha_grads.items():
            state.alpha_model.update(key, -self.lr_alpha * g)
        state.update_count += 1
        return result.loss

    def refresh_target(self):
        state = self._check_initialized()
        state.target_tables = [t.copy() for t in state.q_tables]
        state.last_target_update = state.step_count

    def collect_episode(self, env, seed=None):
        """Play one epsilon-greedy episode and return its transitions."""
        state = self._check_initialized()
        current = env.reset(seed=seed)
        episode = []
        while True:
            joint_action = tuple(
                self.select_action(i, o, explore=True) for i, o in enumerate(current.observations)
            )
            following = env.step(joint_action)
            state.step_count += 1
            episode.append(
                Transition(
                    current.state,
                    current.observations,
                    joint_action,
                    following.reward,
                    following.state,
                    following.observations,
                    following.terminal,
                )
            )
            current = following
            if following.terminal:
                break
        state.episode_count += 1
        return episode

    def evaluate(self, env, seeds):
        """Greedy returns and mean chosen Q value per agent over some episodes."""
        returns = []
        q_sums = np.zeros(self.n_agents_)
        n_steps = 0
        for seed in seeds:
            episode_return, steps = rollout(
                env, lambda step: self.greedy_joint_action(step.observations), seed=int(seed)
            )
            returns.append(episode_return)
            for before, joint_action, _ in steps:
                q_sums += self._chosen_values(before.observations, joint_action)
                n_steps += 1
        return np.asarray(returns), q_sums / max(n_steps, 1)

    def train(self, env, eval_env=None):
        """Run the full training loop on an environment.

        Episodes are collected epsilon-greedily and stored; after each
        episode ``updates_per_episode`` batches are drawn and trained on;
        target tables are refreshed every ``target_update_interval``
        environment steps; the greedy policy is evaluated every
        ``eval_interval`` steps and once at the end.

        Returns
        -------
        record : TrainingRecord
        """
        self.initialize(env)
        state = self.state_
        if eval_env is None:
            eval_env = copy.deepcopy(env)
        eval_rng = np.random.RandomState(state.rng.randint(MAX_SEED))
        env_seed = int(state.rng.randint(MAX_SEED))

        record = TrainingRecord(self.n_agents_)
        losses = []
        next_eval = 0

        def evaluate_now():
            seeds = eval_rng.randint(MAX_SEED, size=self.eval_episodes)
            returns, q_means = self.evaluate(eval_env, seeds)
            row = {
                "step": state.step_count,
                "episodes": state.episode_count,
                "epsilon": state.epsilon.value(state.step_count),
                "loss": float(np.mean(losses)) if losses else np.nan,
                "eval_median_return": float(np.median(returns)),
            }
            for i, value in enumerate(q_means):
                row["eval_q_agent_%d" % i] = float(value)
            record.rows.append(row)
            logger.info(
                "step %d: median greedy return %.3f", state.step_count, row["eval_median_return"]
            )
            del losses[:]

        while state.step_count < self.t_max:
            if state.step_count >= next_eval:
                evaluate_now()
                next_eval += self.eval_interval
            episode = self.collect_episode(env, seed=env_seed if state.episode_count == 0 else None)
            state.buffer.add(episode)
            for _ in range(self.updates_per_episode):
                losses.append(self.train_step(state.buffer.sample(self.batch_size, state.rng)))
            if state.step_count - state.last_target_update >= self.target_update_interval:
                self.refresh_target()
        evaluate_now()

        self.record_ = record
        return record

    def fit(self, env, eval_env=None):
        """Train on ``env``; see :meth:`train`."""
        self.train(env, eval_env=eval_env)
        return self

    def credit_report(self, env, episodes=1, seed=None):
        """Per-agent greedy Q values along greedy rollouts.

        Returns
        -------
        report : pandas.DataFrame
            Columns episode, timestep, agent, action, q_value.
        """
        self._check_initialized()
        rng = check_random_state(seed)
        rows = []
        for episode in range(episodes):
            _, steps = rollout(
                env,
                lambda step: self.greedy_joint_action(step.observations),
                seed=int(rng.randint(MAX_SEED)),
            )
            for t, (before, joint_action, _) in enumerate(steps):
                values = self._chosen_values(before.observations, joint_action)
                for i, (a, value) in enumerate(zip(joint_action, values)):
                    rows.append(
                        {
                            "episode": episode,
                            "timestep": t,
                            "agent": i,
                            "action": int(a),
                            "q_value": float(value),
                        }
                    )
        return pd.DataFrame(rows, columns=["episode", "timestep", "agent", "action", "q_value"])


def shaq(env, eval_env=None, **params):
    """Train a :class:`ShapleyQLearner` on an environment.

    Parameters
    ----------
    env : environment

    eval_env : environment, optional

    **params
        Any :class:`ShapleyQLearner` parameter.

    Returns
    -------
    q_tables : list of QTable

    record : TrainingRecord
    """
    learner = ShapleyQLearner(**params).fit(env, eval_env=eval_env)
    return learner.q_tables_, learner.record_


def _encode_key(key):
    return json.dumps(key)


def _decode_key(text):
    key = json.loads(text)
    return tuple(key) if isinstance(key, list) else key


def _rng_state_to_list(random_state):
    name, keys, pos, has_gauss, cached = random_state.get_state()
    return [name, keys.tolist(), int(pos), int(has_gauss), float(cached)]


def _rng_state_from_list(random_state, document):
    name, keys, pos, has_gauss, cached = document
    random_state.set_state((name, np.asarray(keys, dtype=np.uint32), pos, has_gauss, cached))


def save_checkpoint(learner, path, config_hash=None):
    """Write tables, alpha parameters, counters and both RNG states as JSON.

    The replay buffer is not saved.
    """
    state = learner._check_initialized()
    document = {
        "params": learner.get_params(),
        "actions_per_agent": list(learner.actions_per_agent_),
        "q_tables": [
            {_encode_key(k): v.tolist() for k, v in sorted(t.rows.items(), key=lambda kv: _encode_key(kv[0]))}
            for t in state.q_tables
        ],
        "target_tables": [
            {_encode_key(k): v.tolist() for k, v in sorted(t.rows.items(), key=lambda kv: _encode_key(kv[0]))}
            for t in state.target_tables
        ],
        "alpha_params": {
            _encode_key(k): v.tolist() for k, v in sorted(
                state.alpha_model.parameters.items(), key=lambda kv: _encode_key(kv[0])
            )
        },
        "step_count": state.step_count,
        "episode_count": state.episode_count,
        "rng_state": _rng_state_to_list(state.rng),
        "alpha_rng_state": _rng_state_to_list(state.alpha_model.random_state),
        "config_hash": config_hash,
    }
    if not isinstance(learner.random_state, (int, np.integer)):
        document["params"]["random_state"] = None
    with open(path, "w") as f:
        json.dump(document, f, sort_keys=True)


def load_checkpoint(path):
    """Rebuild a learner from :func:`save_checkpoint` output."""
    with open(path) as f:
        document = json.load(f)

    shape = SimpleNamespace(actions_per_agent=tuple(document["actions_per_agent"]))
    learner = ShapleyQLearner(**document["params"]).initialize(shape)
    state = learner.state_
    for table, rows in zip(state.q_tables, document["q_tables"]):
        table.rows = {_decode_key(k): np.asarray(v, dtype=np.float64) for k, v in rows.items()}
    for table, rows in zip(state.target_tables, document["target_tables"]):
        table.rows = {_decode_key(k): np.asarray(v, dtype=np.float64) for k, v in rows.items()}
    state.alpha_model.parameters = {
        _decode_key(k): np.asarray(v, dtype=np.float64) for k, v in document["alpha_params"].items()
    }
    state.step_count = document["step_count"]
    state.episode_count = document.get("episode_count", 0)
    _rng_state_from_list(state.rng, document["rng_state"])
    if "alpha_rng_state" in document:
        _rng_state_from_list(state.alpha_model.random_state, document["alpha_rng_state"])
    return learner
