import json

import numpy as np

from dataclasses import dataclass
from collections import namedtuple
from logging import info

from common import DatasetParseError, EmptyBufferError, timed
from config import DEFAULT_PER_ALPHA, DEFAULT_PER_EPSILON
from config import DEFAULT_COLLECT_EPSILON
import envs


@dataclass
class Trajectory:
    states: np.ndarray    # (n+1, state_dim)
    actions: np.ndarray    # (n,)

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.actions = np.asarray(self.actions, dtype=int).reshape(-1)
        if self.states.ndim != 2 or self.states.size == 0:
            raise ValueError('trajectory needs at least one state')
        if len(self.states) != len(self.actions) + 1:
            raise ValueError('expected {} states for {} actions, got {}'.format(
                len(self.actions)+1, len(self.actions), len(self.states)))
        if not np.all(np.isfinite(self.states)):
            raise ValueError('non-finite state features')

    def __len__(self):
        return len(self.actions)

    def __eq__(self, other):
        return (isinstance(other, Trajectory) and
                np.array_equal(self.states, other.states) and
                np.array_equal(self.actions, other.actions))


@dataclass
class PairSample:
    s: np.ndarray
    s_prime: np.ndarray
    d_td: int


def gap_indices(n, max_gap):
    """All (i, j) with 0 <= i < j <= n and j - i <= max_gap."""
    gap_limit = n if max_gap is None else min(n, max_gap)
    i, j = [], []
    for gap in range(1, gap_limit+1):
        starts = np.arange(0, n-gap+1)
        i.append(starts)
        j.append(starts + gap)
    if not i:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    return np.concatenate(i), np.concatenate(j)


def extract_pairs(t, max_gap=None):
    i, j = gap_indices(len(t), max_gap)
    return [
        PairSample(t.states[a], t.states[b], int(b-a)) for a, b in zip(i, j)
    ]


def pair_arrays(trajs, max_gap=None):
    """Vectorized extract_pairs over a whole dataset: (s, s', d_td)."""
    s, s_prime, d = [], [], []
    for t in trajs:
        i, j = gap_indices(len(t), max_gap)
        s.append(t.states[i])
        s_prime.append(t.states[j])
        d.append(j - i)
    if not s:
        return np.zeros((0, 0)), np.zeros((0, 0)), np.zeros(0, dtype=int)
    return np.concatenate(s), np.concatenate(s_prime), np.concatenate(d)


def transition_arrays(trajs):
    """All one-step (s, a, s') triples."""
    if not trajs:
        return np.zeros((0, 0)), np.zeros(0, dtype=int), np.zeros((0, 0))
    s = np.concatenate([t.states[:-1] for t in trajs])
    a = np.concatenate([t.actions for t in trajs])
    s_next = np.concatenate([t.states[1:] for t in trajs])
    return s, a, s_next


PairBatch = namedtuple('PairBatch', ['indices', 's', 's_prime', 'd_td'])


class PrioritizedBuffer:
    """Pair replay with P(i) proportional to (priority_i + epsilon)^alpha.
    Linear-scan sampler; new items enter at the current maximal priority."""

    def __init__(self, alpha=DEFAULT_PER_ALPHA, epsilon=DEFAULT_PER_EPSILON):
        if not 0 <= alpha <= 1:
            raise ValueError('alpha_per must be in [0, 1], got {}'.format(
                alpha))
        if epsilon <= 0:
            raise ValueError('epsilon_per must be positive, got {}'.format(
                epsilon))
        self.alpha = alpha
        self.epsilon = epsilon
        self.s = None
        self.s_prime = None
        self.d_td = np.zeros(0, dtype=int)
        self.priorities = np.zeros(0)

    @classmethod
    def from_trajectories(cls, trajs, max_gap=None, **kwargs):
        buf = cls(**kwargs)
        buf.add(*pair_arrays(trajs, max_gap))
        return buf

    def __len__(self):
        return len(self.d_td)

    def add(self, s, s_prime, d_td):
        s, s_prime = np.atleast_2d(s), np.atleast_2d(s_prime)
        d_td = np.asarray(d_td, dtype=int).reshape(-1)
        if len(d_td) == 0:
            return
        if len(s) != len(d_td) or len(s_prime) != len(d_td):
            raise ValueError('pair arrays differ in length')
        if np.any(d_td < 1):
            raise ValueError('pair distances must be >= 1')
        initial = self.priorities.max() if len(self) else 1.0
        if self.s is None:
            self.s, self.s_prime = s.astype(float), s_prime.astype(float)
        else:
            self.s = np.concatenate([self.s, s])
            self.s_prime = np.concatenate([self.s_prime, s_prime])
        self.d_td = np.concatenate([self.d_td, d_td])
        self.priorities = np.concatenate(
            [self.priorities, np.full(len(d_td), initial)])

    def add_samples(self, samples):
        self.add(np.array([p.s for p in samples]),
                 np.array([p.s_prime for p in samples]),
                 [p.d_td for p in samples])

    def probabilities(self):
        weights = (self.priorities + self.epsilon) ** self.alpha
        return weights / weights.sum()

    def sample_batch(self, batch_size, rng):
        if len(self) == 0:
            raise EmptyBufferError('cannot sample from an empty buffer')
        indices = rng.choice(len(self), size=batch_size, replace=True,
                             p=self.probabilities())
        return PairBatch(indices, self.s[indices], self.s_prime[indices],
                         self.d_td[indices])

    def samples(self, indices):
        return [
            PairSample(self.s[i], self.s_prime[i], int(self.d_td[i]))
            for i in indices
        ]

    def update_priorities(self, indices, new_priorities):
        indices = np.asarray(indices, dtype=int).reshape(-1)
        new_priorities = np.asarray(new_priorities, dtype=float).reshape(-1)
        if len(indices) != len(new_priorities):
            raise ValueError('{} indices but {} priorities'.format(
                len(indices), len(new_priorities)))
        if np.any((indices < 0) | (indices >= len(self))):
            raise IndexError('priority index out of range [0, {})'.format(
                len(self)))
        if not np.all(np.isfinite(new_priorities)):
            raise ValueError('priorities must be finite')
        if np.any(new_priorities < 0):
            raise ValueError('priorities must be non-negative')
        self.priorities[indices] = new_priorities


def save_dataset(trajs, path):
    with open(path, 'w') as out:
        for t in trajs:
            record = {
                'states': [[float(v) for v in s] for s in t.states],
                'actions': [int(a) for a in t.actions],
            }
            print(json.dumps(record), file=out)


@timed
def load_dataset(path):
    trajs = []
    with open(path) as f:
        for ln, l in enumerate(f, start=1):
            if not l.strip():
                continue
            try:
                record = json.loads(l)
                trajs.append(Trajectory(record['states'], record['actions']))
            except (ValueError, KeyError, TypeError) as e:
                raise DatasetParseError(
                    path, ln, 'malformed trajectory record ({})'.format(e))
            if trajs[-1].states.shape[1] != trajs[0].states.shape[1]:
                raise DatasetParseError(
                    path, ln, 'state dimension {} differs from {}'.format(
                        trajs[-1].states.shape[1], trajs[0].states.shape[1]))
    info('Read {} trajectories from {}'.format(len(trajs), path))
    return trajs


def random_policy(spec):
    def act(s, rng):
        return int(rng.integers(spec.num_actions))
    return act


def epsilon_greedy_policy(spec, qtable, epsilon=DEFAULT_COLLECT_EPSILON):
    def act(s, rng):
        if rng.random() < epsilon:
            return int(rng.integers(spec.num_actions))
        return qtable.greedy_action(envs.state_key(spec, s))
    return act


@timed
def collect_trajectories(spec, policy, n_traj, seed):
    """Roll out n_traj episodes of at most spec.max_episode_steps steps.
    Episodes end early only when spec.goal (if any) is reached."""
    rng = np.random.default_rng(seed)
    trajs = []
    for _ in range(n_traj):
        env = envs.Env(spec, rng=rng)
        s = env.reset(seed=int(rng.integers(2**31)))
        states, actions = [s], []
        done = env.done
        while not done:
            a = policy(s, rng)
            s, _, done = env.step(a)
            states.append(s)
            actions.append(a)
        trajs.append(Trajectory(np.array(states), np.array(actions, dtype=int)))
    return trajs


def coverage(spec, trajs):
    """Fraction of enumerable states visited by the dataset."""
    keys = set(envs.enumerate_keys(spec))
    visited = {
        envs.state_key(spec, s) for t in trajs for s in t.states
    }
    return len(visited & keys) / len(keys)
