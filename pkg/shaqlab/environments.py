# -*- coding: utf-8 -*-
"""
Global-reward environments for the tabular learners: cooperative matrix
games, a predator-prey gridworld and an adapter turning an explicit
Markov convex game into an episodic environment.

All environments share one interface: ``reset(seed=None)`` and
``step(joint_action)`` both return an :class:`EnvStep` whose observations
and state are hashable integer keys.
"""
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from gymnasium import spaces
from sklearn.utils import check_random_state

logger = logging.getLogger(__name__)

STAY, UP, DOWN, LEFT, RIGHT, CAPTURE = range(6)
ACTION_NAMES = ("stay", "up", "down", "left", "right", "capture")
MOVES = {STAY: (0, 0), UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1)}

EMPTY, PREDATOR, PREY, OUT_OF_BOUNDS = range(4)


@dataclass
class EnvStep:
    """What every agent sees after a reset or a step."""

    observations: tuple
    state: int
    reward: float
    terminal: bool
    info: dict = field(default_factory=dict)


def _check_joint_action(action_space, joint_action):
    joint_action = np.asarray(joint_action)
    if not action_space.contains(joint_action.astype(np.int64, copy=False)):
        raise ValueError(
            "Joint action %s is not valid for action counts %s"
            % (joint_action.tolist(), action_space.nvec.tolist())
        )
    return tuple(int(a) for a in joint_action)


@dataclass
class MatrixGameConfig:
    """A repeated cooperative normal-form game.

    ``payoff`` is indexed by one action per agent and holds the global
    reward of every joint action.
    """

    payoff: np.ndarray
    episode_length: int = 1

    def __post_init__(self):
        self.payoff = np.asarray(self.payoff, dtype=np.float64)
        if self.payoff.ndim < 1:
            raise ValueError("Payoff needs one axis per agent")
        if not np.all(np.isfinite(self.payoff)):
            raise ValueError("Payoff entries must be finite")
        if self.episode_length < 1:
            raise ValueError("episode_length must be at least 1, got %d" % self.episode_length)

    @property
    def n_agents(self):
        return self.payoff.ndim

    @property
    def actions_per_agent(self):
        return self.payoff.shape


def matrix_game_step(config, joint_action, t=0):
    """Payoff of a joint action played at step ``t`` of an episode."""
    if len(joint_action) != config.n_agents:
        raise ValueError(
            "Expected %d actions, got %d" % (config.n_agents, len(joint_action))
        )
    for a, n in zip(joint_action, config.actions_per_agent):
        if not 0 <= a < n:
            raise ValueError("Action %d out of range [0, %d)" % (a, n))
    reward = float(config.payoff[tuple(int(a) for a in joint_action)])
    return EnvStep(
        observations=(0,) * config.n_agents,
        state=0,
        reward=reward,
        terminal=t + 1 >= config.episode_length,
    )


class MatrixGame(object):
    """Environment wrapper around :class:`MatrixGameConfig`."""

    def __init__(self, config):
        if not isinstance(config, MatrixGameConfig):
            config = MatrixGameConfig(**config)
        self.config = config
        self.action_space = spaces.MultiDiscrete(list(config.actions_per_agent))
        self._t = 0

    @property
    def n_agents(self):
        return self.config.n_agents

    @property
    def actions_per_agent(self):
        return tuple(self.config.actions_per_agent)

    @property
    def episode_limit(self):
        return self.config.episode_length

    def reset(self, seed=None):
        self._t = 0
        return EnvStep((0,) * self.n_agents, 0, 0.0, False)

    def step(self, joint_action):
        result = matrix_game_step(self.config, joint_action, self._t)
        self._t += 1
        return result


@dataclass
class PredatorPreyConfig:
    """Predator-prey settings; the defaults are the desk-scale task.

    With ``observe_position`` a predator also sees its own cell, so that
    windows with nothing in view still tell positions apart.
    """

    grid_size: int = 5
    n_predators: int = 2
    n_preys: int = 2
    capture_reward: float = 10.0
    penalty_p: float = -0.5
    obs_window: int = 3
    episode_limit: int = 200
    prey_policy: str = "random"
    observe_position: bool = False

    def __post_init__(self):
        if self.grid_size < 1 or self.n_predators < 1 or self.n_preys < 1:
            raise ValueError("grid_size, n_predators and n_preys must be positive")
        if self.n_predators + self.n_preys > self.grid_size ** 2:
            raise ValueError(
                "%d predators and %d preys do not fit on a %dx%d grid"
                % (self.n_predators, self.n_preys, self.grid_size, self.grid_size)
            )
        if self.obs_window < 1 or self.obs_window % 2 == 0:
            raise ValueError("obs_window must be a positive odd integer, got %d" % self.obs_window)
        if self.obs_window > self.grid_size:
            raise ValueError("obs_window may not exceed grid_size")
        if self.penalty_p > 0:
            raise ValueError("penalty_p must be <= 0, got %r" % self.penalty_p)
        if self.episode_limit < 1:
            raise ValueError("episode_limit must be at least 1")
        if self.prey_policy != "random":
            raise ValueError("Unknown prey policy %r; only 'random' is supported" % self.prey_policy)


@dataclass
class PredatorPreyState:
    """Full Markov state: positions, prey liveness and the step counter."""

    predators: list
    preys: list
    alive: list
    t: int = 0

    def copy(self):
        return PredatorPreyState(list(self.predators), list(self.preys), list(self.alive), self.t)


def _adjacent(a, b):
    return abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1


def _in_bounds(cell, grid_size):
    return 0 <= cell[0] < grid_size and 0 <= cell[1] < grid_size


def predator_prey_state_key(state, config):
    """Injective integer key of a full predator-prey state."""
    cells = config.grid_size ** 2
    key = 0
    for r, c in state.predators:
        key = key * cells + r * config.grid_size + c
    for (r, c), alive in zip(state.preys, state.alive):
        key = key * cells + (r * config.grid_size + c if alive else 0)
        key = key * 2 + int(alive)
    return key


def predator_prey_observation(state, config, agent):
    """Base-4 key of the window of cell codes centred on a predator.

    The own cell index is appended when ``config.observe_position`` is set.
    """
    half = config.obs_window // 2
    occupancy = {}
    for pos in state.predators:
        occupancy[pos] = PREDATOR
    for pos, alive in zip(state.preys, state.alive):
        if alive:
            occupancy[pos] = PREY
    row, col = state.predators[agent]
    key = 0
    for dr in range(-half, half + 1):
        for dc in range(-half, half + 1):
            cell = (row + dr, col + dc)
            if not _in_bounds(cell, config.grid_size):
                code = OUT_OF_BOUNDS
            else:
                code = occupancy.get(cell, EMPTY)
            key = key * 4 + code
    if config.observe_position:
        key = key * config.grid_size ** 2 + row * config.grid_size + col
    return key


def predator_prey_step(state, joint_action, config, random_state):
    """Advance predator-prey by one step.

    Captures are resolved first on the current positions: each capturing
    predator targets its lowest-index adjacent live prey, a prey targeted
    by two or more predators is captured for ``capture_reward`` and every
    other targeting predator pays ``penalty_p``. A capture with no
    adjacent prey does nothing. Predators then move in index order (a
    move into an occupied or off-grid cell leaves the agent in place),
    followed by the live preys, each picking uniformly among its feasible
    moves.

    Parameters
    ----------
    state : PredatorPreyState

    joint_action : sequence of int

    config : PredatorPreyConfig

    random_state : instance of RandomState

    Returns
    -------
    next_state : PredatorPreyState

    step : EnvStep
        ``info`` holds the captured prey indices and the number of lone
        attempts.
    """
    state = state.copy()
    grid = config.grid_size

    targets = {}
    for agent, action in enumerate(joint_action):
        if action != CAPTURE:
            continue
        for prey, (pos, alive) in enumerate(zip(state.preys, state.alive)):
            if alive and _adjacent(state.predators[agent], pos):
                targets.setdefault(prey, []).append(agent)
                break

    reward = 0.0
    captured = []
    lone_attempts = 0
    for prey in sorted(targets):
        hunters = targets[prey]
        if len(hunters) >= 2:
            state.alive[prey] = False
            captured.append(prey)
            reward += config.capture_reward
        else:
            lone_attempts += len(hunters)
            reward += config.penalty_p * len(hunters)

    for agent, action in enumerate(joint_action):
        if action not in MOVES or action == STAY:
            continue
        dr, dc = MOVES[action]
        row, col = state.predators[agent]
        cell = (row + dr, col + dc)
        blocked = (
            not _in_bounds(cell, grid)
            or cell in state.predators
            or any(alive and pos == cell for pos, alive in zip(state.preys, state.alive))
        )
        if not blocked:
            state.predators[agent] = cell

    for prey, alive in enumerate(state.alive):
        if not alive:
            continue
        row, col = state.preys[prey]
        options = []
        for action in (STAY, UP, DOWN, LEFT, RIGHT):
            dr, dc = MOVES[action]
            cell = (row + dr, col + dc)
            if action == STAY:
                options.append(cell)
                continue
            occupied = cell in state.predators or any(
                other_alive and pos == cell
                for other, (pos, other_alive) in enumerate(zip(state.preys, state.alive))
                if other != prey
            )
            if _in_bounds(cell, grid) and not occupied:
                options.append(cell)
        state.preys[prey] = options[random_state.randint(len(options))]

    state.t += 1
    terminal = not any(state.alive) or state.t >= config.episode_limit
    observations = tuple(
        predator_prey_observation(state, config, i) for i in range(config.n_predators)
    )
    step = EnvStep(
        observations,
        predator_prey_state_key(state, config),
        reward,
        terminal,
        {"captured": captured, "lone_attempts": lone_attempts},
    )
    return state, step


class PredatorPrey(object):
    """Predators on a square grid cooperating to capture randomly moving preys.

    Each predator picks one of stay, up, down, left, right or capture. Two
    or more predators next to the same prey capturing together remove it
    and earn the team ``capture_reward``; an unsupported attempt costs
    ``penalty_p`` per attempting predator. Episodes end when every prey is
    captured or after ``episode_limit`` steps.

    Parameters
    ----------
    config : PredatorPreyConfig or dict, optional

    random_state : None, int or instance of RandomState, optional
        Drives initial positions and prey moves.
    """

    n_actions = len(ACTION_NAMES)

    def __init__(self, config=None, random_state=None):
        if config is None:
            config = PredatorPreyConfig()
        elif not isinstance(config, PredatorPreyConfig):
            config = PredatorPreyConfig(**config)
        self.config = config
        self.action_space = spaces.MultiDiscrete([self.n_actions] * config.n_predators)
        self._random_state = check_random_state(random_state)
        self.state = None
        self._episode_return = 0.0

    @property
    def n_agents(self):
        return self.config.n_predators

    @property
    def actions_per_agent(self):
        return (self.n_actions,) * self.config.n_predators

    @property
    def episode_limit(self):
        return self.config.episode_limit

    @property
    def max_episode_return(self):
        return self.config.n_preys * self.config.capture_reward

    def reset(self, seed=None):
        if seed is not None:
            self._random_state = check_random_state(seed)
        config = self.config
        cells = self._random_state.choice(
            config.grid_size ** 2, size=config.n_predators + config.n_preys, replace=False
        )
        positions = [tuple(int(x) for x in divmod(c, config.grid_size)) for c in cells]
        self.state = PredatorPreyState(
            positions[: config.n_predators],
            positions[config.n_predators:],
            [True] * config.n_preys,
        )
        self._episode_return = 0.0
        return self._observe(0.0, False)

    def set_state(self, state):
        """Place predators and preys explicitly."""
        self.state = state.copy()
        self._episode_return = 0.0
        return self._observe(0.0, False)

    def _observe(self, reward, terminal, info=None):
        observations = tuple(
            predator_prey_observation(self.state, self.config, i) for i in range(self.n_agents)
        )
        return EnvStep(
            observations,
            predator_prey_state_key(self.state, self.config),
            reward,
            terminal,
            info or {},
        )

    def step(self, joint_action):
        if self.state is None:
            raise AttributeError("Environment must be reset before stepping!")
        joint_action = _check_joint_action(self.action_space, joint_action)
        self.state, result = predator_prey_step(
            self.state, joint_action, self.config, self._random_state
        )
        self._episode_return += result.reward
        assert self._episode_return <= self.max_episode_return + 1e-9
        return result


class MCGEnv(object):
    """Episodic environment driven by an explicit Markov convex game.

    The reward is the grand-coalition reward R(N, s, a) and every agent
    observes the state index.

    Parameters
    ----------
    game : MarkovConvexGame

    horizon : int
        Episode length.

    initial_state : int or None, optional (default=0)
        Start state; drawn uniformly when None.

    random_state : None, int or instance of RandomState
    """

    def __init__(self, game, horizon, initial_state=0, random_state=None):
        if horizon < 1:
            raise ValueError("horizon must be at least 1, got %d" % horizon)
        if initial_state is not None and not 0 <= initial_state < game.n_states:
            raise ValueError("initial_state %d out of range" % initial_state)
        self.game = game
        self.horizon = int(horizon)
        self.initial_state = initial_state
        self.action_space = spaces.MultiDiscrete(list(game.actions_per_agent))
        self._random_state = check_random_state(random_state)
        self._reward = game.global_reward()
        self._state = None
        self._t = 0

    @property
    def n_agents(self):
        return self.game.n_agents

    @property
    def actions_per_agent(self):
        return self.game.actions_per_agent

    @property
    def episode_limit(self):
        return self.horizon

    def reset(self, seed=None):
        if seed is not None:
            self._random_state = check_random_state(seed)
        if self.initial_state is None:
            self._state = int(self._random_state.randint(self.game.n_states))
        else:
            self._state = int(self.initial_state)
        self._t = 0
        return EnvStep((self._state,) * self.n_agents, self._state, 0.0, False)

    def step(self, joint_action):
        if self._state is None:
            raise AttributeError("Environment must be reset before stepping!")
        joint_action = _check_joint_action(self.action_space, joint_action)
        rank = self.game.joint_action_rank(joint_action)
        reward = float(self._reward[self._state, rank])
        probabilities = self.game.transition[self._state, rank]
        self._state = int(self._random_state.choice(self.game.n_states, p=probabilities))
        self._t += 1
        return EnvStep(
            (self._state,) * self.n_agents, self._state, reward, self._t >= self.horizon
        )


def mcg_as_env(game, horizon, initial_state=0, random_state=None):
    """Expose a Markov convex game as a training environment."""
    return MCGEnv(game, horizon, initial_state=initial_state, random_state=random_state)


def make_env(document, game=None, random_state=None):
    """Build an environment from a config document.

    ``document['kind']`` is one of ``matrix``, ``predator_prey`` or
    ``mcg``; the ``mcg`` kind needs ``game``.
    """
    params = dict(document)
    kind = params.pop("kind", None)
    if kind == "matrix":
        return MatrixGame(MatrixGameConfig(**params))
    elif kind == "predator_prey":
        return PredatorPrey(PredatorPreyConfig(**params), random_state=random_state)
    elif kind == "mcg":
        if game is None:
            raise ValueError("The mcg environment needs a game")
        return mcg_as_env(game, random_state=random_state, **params)
    raise ValueError("Unknown environment kind %r" % (kind,))


def rollout(env, policy, seed=None, trace_path=None):
    """Play one episode.

    Parameters
    ----------
    env : environment

    policy : callable
        Maps an :class:`EnvStep` to a joint action.

    seed : int, optional
        Passed to ``env.reset``.

    trace_path : string, optional
        Append the episode as JSON lines (step, state, actions, reward).

    Returns
    -------
    episode_return : float

    steps : list of (EnvStep, joint action, EnvStep)
    """
    current = env.reset(seed=seed)
    episode_return = 0.0
    steps = []
    while True:
        joint_action = tuple(int(a) for a in policy(current))
        following = env.step(joint_action)
        steps.append((current, joint_action, following))
        episode_return += following.reward
        current = following
        if following.terminal:
            break
    if trace_path is not None:
        with open(trace_path, "a") as f:
            for t, (before, joint_action, after) in enumerate(steps):
                f.write(
                    json.dumps(
                        {
                            "step": t,
                            "state": str(before.state),
                            "actions": list(joint_action),
                            "reward": after.reward,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
    return episode_return, steps
