"""Toy MDPs: open and walled grids, a key/door grid and a mountain hill.

Grid states are emitted as normalized features (x/(W-1), y/(H-1)); the key/door
grid appends has_key in {0, 1}; the mountain hill emits (position, velocity).
Every step costs -1 so that the optimal return from s to a goal is -MAD.
"""

import math

import numpy as np

from collections import deque
from dataclasses import dataclass, field

from common import ConfigError, load_toml
from config import DEFAULT_MAX_EPISODE_STEPS, GRID_ACTIONS
from config import MOUNTAIN_HILL_ACTIONS


ENV_IDS = ('open_grid', 'walls_grid', 'keydoor_grid', 'mountain_hill')
GRID_IDS = ('open_grid', 'walls_grid', 'keydoor_grid')

# up, down, left, right
MOVES = ((0, -1), (0, 1), (-1, 0), (1, 0))

MIN_POSITION, MAX_POSITION = -1.2, 0.6
MAX_SPEED = 0.07
GOAL_POSITION = 0.5
FORCE, GRAVITY = 0.001, 0.0025


@dataclass(frozen=True)
class EnvSpec:
    id: str
    width: int = None
    height: int = None
    walls: frozenset = field(default_factory=frozenset)
    max_episode_steps: int = DEFAULT_MAX_EPISODE_STEPS
    seed: int = 0
    start: tuple = None
    goal: tuple = None
    key: tuple = None
    door: tuple = None
    slip_prob: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, 'walls', frozenset(
            tuple(w) for w in self.walls))
        for name in ('start', 'goal', 'key', 'door'):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(value))
        self.validate()

    def validate(self):
        if self.id not in ENV_IDS:
            raise ConfigError('unknown env {!r}, expected one of {}'.format(
                self.id, ENV_IDS))
        if self.max_episode_steps < 1:
            raise ConfigError('max_episode_steps must be >= 1, got {}'.format(
                self.max_episode_steps))
        if not 0 <= self.slip_prob < 1:
            raise ConfigError('slip_prob must be in [0, 1), got {}'.format(
                self.slip_prob))
        if not self.is_grid:
            if self.slip_prob:
                raise ConfigError('slip_prob applies to grids only')
            return
        if self.width is None or self.height is None:
            raise ConfigError('{} requires width and height'.format(self.id))
        if self.width < 2 or self.height < 2:
            raise ConfigError('grid dimensions must be >= 2, got {}x{}'.format(
                self.width, self.height))
        for cell in self.walls:
            if not self.in_bounds(cell):
                raise ConfigError('wall {} outside {}x{} grid'.format(
                    cell, self.width, self.height))
        if self.id == 'keydoor_grid':
            for name in ('start', 'key', 'door', 'goal'):
                if getattr(self, name) is None:
                    raise ConfigError('keydoor_grid requires {}'.format(name))
        for name in ('start', 'goal', 'key', 'door'):
            cell = getattr(self, name)
            if cell is None:
                continue
            if not self.in_bounds(cell[:2]):
                raise ConfigError('{} {} outside grid'.format(name, cell))
            if tuple(cell[:2]) in self.walls:
                raise ConfigError('{} {} is a wall'.format(name, cell))
        if len(self.walls) >= self.width * self.height:
            raise ConfigError('walls cover all cells')

    @property
    def is_grid(self):
        return self.id in GRID_IDS

    @property
    def enumerable(self):
        return self.is_grid

    @property
    def deterministic(self):
        return self.slip_prob == 0

    @property
    def num_actions(self):
        return GRID_ACTIONS if self.is_grid else MOUNTAIN_HILL_ACTIONS

    @property
    def state_dim(self):
        return 3 if self.id == 'keydoor_grid' else 2

    def in_bounds(self, cell):
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height

    def free_cells(self):
        cells = [
            (x, y) for y in range(self.height) for x in range(self.width)
            if (x, y) not in self.walls
        ]
        if not cells:
            raise ConfigError('walls cover all cells')
        return cells


def make_keydoor_spec(width=6, height=6, max_episode_steps=DEFAULT_MAX_EPISODE_STEPS,
                      seed=0, slip_prob=0.0):
    """Key/door world: a wall column splits the grid, a single door cell in
    it opens only after the key (on the start side) has been picked up."""
    wall_x = width // 2
    door = (wall_x, height // 2)
    walls = [(wall_x, y) for y in range(height) if (wall_x, y) != door]
    return EnvSpec(
        id='keydoor_grid', width=width, height=height, walls=walls,
        max_episode_steps=max_episode_steps, seed=seed, slip_prob=slip_prob,
        start=(0, 0), key=(0, height-1), door=door, goal=(width-1, 0),
    )


_ENV_FILE_KEYS = {
    'env', 'width', 'height', 'walls', 'max_steps', 'seed', 'start', 'goal',
    'key', 'door', 'slip_prob',
}


def load_env_spec(path):
    config = load_toml(path)
    unknown = set(config) - _ENV_FILE_KEYS
    if unknown:
        raise ConfigError('unknown keys {} in {}'.format(
            sorted(unknown), path))
    if 'env' not in config:
        raise ConfigError('missing "env" in {}'.format(path))
    try:
        if config['env'] == 'keydoor_grid' and 'door' not in config:
            return make_keydoor_spec(
                width=config.get('width', 6), height=config.get('height', 6),
                max_episode_steps=config.get('max_steps',
                                             DEFAULT_MAX_EPISODE_STEPS),
                seed=config.get('seed', 0),
                slip_prob=config.get('slip_prob', 0.0),
            )
        return EnvSpec(
            id=config['env'],
            width=config.get('width'),
            height=config.get('height'),
            walls=frozenset(tuple(w) for w in config.get('walls', [])),
            max_episode_steps=config.get('max_steps',
                                         DEFAULT_MAX_EPISODE_STEPS),
            seed=config.get('seed', 0),
            start=config.get('start'),
            goal=config.get('goal'),
            key=config.get('key'),
            door=config.get('door'),
            slip_prob=config.get('slip_prob', 0.0),
        )
    except ConfigError as e:
        raise ConfigError('{}: {}'.format(path, e))


def features(spec, key):
    """Normalized feature vector of a grid state key."""
    x, y = key[0] / (spec.width-1), key[1] / (spec.height-1)
    if spec.id == 'keydoor_grid':
        return np.array([x, y, float(key[2])])
    return np.array([x, y])


def state_key(spec, s):
    if not spec.enumerable:
        raise NotImplementedError('{} has no discrete state keys'.format(
            spec.id))
    x = int(round(s[0] * (spec.width-1)))
    y = int(round(s[1] * (spec.height-1)))
    if spec.id == 'keydoor_grid':
        return (x, y, int(round(s[2])))
    return (x, y)


def state_from_key(spec, key):
    return features(spec, key)


def transition_key(spec, key, a):
    """One deterministic grid move on state keys."""
    dx, dy = MOVES[a]
    x, y = key[0], key[1]
    nx, ny = x + dx, y + dy
    if not spec.in_bounds((nx, ny)) or (nx, ny) in spec.walls:
        return key
    if spec.id != 'keydoor_grid':
        return (nx, ny)
    has_key = key[2]
    if (nx, ny) == spec.door and not has_key:
        return key
    if (nx, ny) == spec.key:
        has_key = 1
    return (nx, ny, has_key)


def _check_action(spec, a):
    if not 0 <= a < spec.num_actions:
        raise ValueError('action {} outside [0, {})'.format(
            a, spec.num_actions))


def reset(spec, seed):
    rng = np.random.default_rng(seed)
    if spec.id == 'mountain_hill':
        return np.array([rng.uniform(-0.6, -0.4), 0.0])
    if spec.id == 'keydoor_grid':
        return features(spec, spec.start[:2] + (0,))
    cells = spec.free_cells()
    if spec.start is not None:
        return features(spec, spec.start)
    return features(spec, cells[rng.integers(len(cells))])


def _mountain_hill_step(s, a):
    position, velocity = float(s[0]), float(s[1])
    velocity += (a-1) * FORCE + math.cos(3*position) * (-GRAVITY)
    velocity = min(max(velocity, -MAX_SPEED), MAX_SPEED)
    position += velocity
    position = min(max(position, MIN_POSITION), MAX_POSITION)
    if position == MIN_POSITION and velocity < 0:
        velocity = 0.0
    return np.array([position, velocity])


def goal_reached(spec, s, goal=None):
    """Grid goals are compared on state keys; a key/door goal given as a
    cell only (spec.goal) is reached with or without the key."""
    if spec.id == 'mountain_hill':
        return s[0] >= GOAL_POSITION
    key = state_key(spec, s)
    if goal is not None:
        return key == state_key(spec, goal)
    if spec.goal is not None:
        return key[:2] == spec.goal[:2]
    return False


def step(spec, s, a, goal=None, rng=None):
    """With spec.slip_prob > 0 the chosen action is replaced by a uniformly
    random one with that probability, drawn from rng."""
    _check_action(spec, a)
    if not spec.deterministic:
        if rng is None:
            raise ValueError('{} with slip_prob {} needs an rng'.format(
                spec.id, spec.slip_prob))
        if rng.random() < spec.slip_prob:
            a = int(rng.integers(spec.num_actions))
    if spec.id == 'mountain_hill':
        s_next = _mountain_hill_step(s, a)
    else:
        s_next = features(spec, transition_key(spec, state_key(spec, s), a))
    return s_next, -1.0, bool(goal_reached(spec, s_next, goal))


def enumerate_keys(spec):
    if not spec.enumerable:
        raise NotImplementedError('cannot enumerate states of {}'.format(
            spec.id))
    if spec.id != 'keydoor_grid':
        return spec.free_cells()
    start = spec.start[:2] + (0,)
    seen, queue = {start}, deque([start])
    while queue:
        key = queue.popleft()
        for a in range(spec.num_actions):
            next_key = transition_key(spec, key, a)
            if next_key not in seen:
                seen.add(next_key)
                queue.append(next_key)
    return sorted(seen, key=lambda k: (k[2], k[1], k[0]))


def enumerate_states(spec):
    return [features(spec, key) for key in enumerate_keys(spec)]


class Env:
    """Episode wrapper around the pure transition functions. Applies the
    step budget and remembers whether the goal (rather than the budget)
    ended the episode. Without an explicit rng, slips are drawn from a
    generator seeded on reset."""

    def __init__(self, spec, goal=None, rng=None):
        self.spec = spec
        self.goal = goal
        self.rng = rng
        self._seed_rng = rng is None
        self.state = None
        self.steps = 0
        self.reached_goal = False

    def reset(self, seed=None, start=None):
        if seed is None:
            seed = self.spec.seed
        if self._seed_rng:
            self.rng = np.random.default_rng(seed)
        if start is None:
            start = reset(self.spec, seed)
        self.state = np.array(start, dtype=float)
        self.steps = 0
        self.reached_goal = bool(goal_reached(self.spec, self.state, self.goal))
        return self.state

    @property
    def done(self):
        return self.reached_goal or self.steps >= self.spec.max_episode_steps

    def step(self, a):
        self.state, reward, self.reached_goal = step(
            self.spec, self.state, a, self.goal, self.rng)
        self.steps += 1
        return self.state, reward, self.done
