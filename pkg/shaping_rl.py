"""Reward shaping with the learned distance, a tabular Q-learning agent that
consumes it, an exact value-iteration oracle, and the goal-conditioned
behavioral-cloning (GCSL) baseline."""

import json

import numpy as np

from dataclasses import dataclass
from logging import info

from common import ConfigError, CheckpointError, timed
from config import DEFAULT_Q_EPISODES, DEFAULT_Q_LR, DEFAULT_GAMMA
from config import DEFAULT_EPSILON_START, DEFAULT_EPSILON_END
from config import DEFAULT_EPSILON_DECAY_EPISODES, DEFAULT_SUCCESS_THRESHOLD
from config import DEFAULT_SUCCESS_WINDOW, DEFAULT_HIDDEN, DEFAULT_LR
from config import DEFAULT_GCSL_STEPS, DEFAULT_GCSL_BATCH_SIZE
from config import DEFAULT_WEIGHT_DECAY, DEFAULT_LOG_EVERY
from neural import Mlp, AdamW, softmax_cross_entropy
from neural import save_networks, restore_networks
from trajdata import Trajectory, gap_indices
from latent import EpisodeResult
import envs


@dataclass
class ShapedReward:
    """Potential Phi(s) = -d(phi(s), phi(goal)); F = gamma Phi(s') - Phi(s)."""
    gamma: float
    goal: np.ndarray
    embedding: object

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ConfigError('gamma must be in (0, 1], got {}'.format(
                self.gamma))
        self.goal = np.asarray(self.goal, dtype=float)

    def potential(self, s):
        return -self.embedding.dist(s, self.goal)

    def shaping(self, s, s_prime):
        return self.gamma * self.potential(s_prime) - self.potential(s)

    def __call__(self, s, r, s_prime):
        return r + self.shaping(s, s_prime)


def shaped_reward(sr, s, r, s_prime):
    return sr(s, r, s_prime)


@dataclass
class QConfig:
    episodes: int = DEFAULT_Q_EPISODES
    learning_rate: float = DEFAULT_Q_LR
    gamma: float = DEFAULT_GAMMA
    epsilon_start: float = DEFAULT_EPSILON_START
    epsilon_end: float = DEFAULT_EPSILON_END
    epsilon_decay_episodes: int = DEFAULT_EPSILON_DECAY_EPISODES
    max_steps: int = None    # default: spec.max_episode_steps
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ConfigError('gamma must be in (0, 1]')
        if not 0 < self.learning_rate <= 1:
            raise ConfigError('learning_rate must be in (0, 1]')

    def epsilon(self, episode):
        if self.epsilon_decay_episodes <= 0:
            return self.epsilon_end
        frac = min(1.0, episode / self.epsilon_decay_episodes)
        return self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)


class QTable:
    def __init__(self, keys, num_actions, values=None):
        self.keys = [tuple(k) for k in keys]
        self.index = { k: i for i, k in enumerate(self.keys) }
        if values is None:
            values = np.zeros((len(self.keys), num_actions))
        self.values = np.asarray(values, dtype=float)

    def greedy_action(self, key):
        return int(np.argmax(self.values[self.index[tuple(key)]]))

    def save(self, path):
        with open(path, 'w') as out:
            json.dump({
                'keys': [list(k) for k in self.keys],
                'values': self.values.tolist(),
            }, out)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as f:
                data = json.load(f)
            values = np.array(data['values'], dtype=float)
            return cls(data['keys'], values.shape[1], values)
        except (OSError, ValueError, KeyError, IndexError) as e:
            raise CheckpointError(path, e)


def _transition_table(spec, keys):
    index = { k: i for i, k in enumerate(keys) }
    return np.array([
        [index[envs.transition_key(spec, k, a)] for a in range(spec.num_actions)]
        for k in keys
    ])


def _potentials(spec, keys, shaping):
    if shaping is None:
        return None
    states = np.array([envs.features(spec, k) for k in keys])
    return np.asarray(shaping.potential(states), dtype=float)


def _require_enumerable(spec):
    if not spec.enumerable:
        raise NotImplementedError('tabular methods need an enumerable env, '
                                  'got {}'.format(spec.id))
    if not spec.deterministic:
        raise NotImplementedError('tabular methods need deterministic moves, '
                                  'got slip_prob {}'.format(spec.slip_prob))


@timed
def q_learn(spec, goal, shaping=None, config=None):
    """Tabular Q-learning toward a fixed goal state. Updates use the shaped
    reward when shaping is given; the learning curve always records the
    original return. Returns (QTable, curve) with curve rows
    (episode, return, steps, success)."""
    _require_enumerable(spec)
    config = config or QConfig()
    keys = envs.enumerate_keys(spec)
    table = QTable(keys, spec.num_actions)
    succ = _transition_table(spec, keys)
    phi = _potentials(spec, keys, shaping)
    goal_index = table.index[envs.state_key(spec, goal)]
    max_steps = config.max_steps or spec.max_episode_steps
    rng = np.random.default_rng(config.seed)
    q, gamma, lr = table.values, config.gamma, config.learning_rate
    curve = []
    for episode in range(config.episodes):
        epsilon = config.epsilon(episode)
        start = envs.reset(spec, int(rng.integers(2**31)))
        s = table.index[envs.state_key(spec, start)]
        ret, steps = 0.0, 0
        while s != goal_index and steps < max_steps:
            if rng.random() < epsilon:
                a = int(rng.integers(spec.num_actions))
            else:
                a = int(np.argmax(q[s]))
            s_next = succ[s, a]
            r = -1.0
            terminal = s_next == goal_index
            r_bar = r if phi is None else r + shaping.gamma * phi[s_next] - phi[s]
            target = r_bar if terminal else r_bar + gamma * q[s_next].max()
            q[s, a] += lr * (target - q[s, a])
            ret += r
            steps += 1
            s = s_next
        curve.append((episode, ret, steps, bool(s == goal_index)))
    info('Q-learning: {} episodes, final-window success {:.1%}'.format(
        config.episodes,
        np.mean([c[3] for c in curve[-DEFAULT_SUCCESS_WINDOW:]])))
    return table, curve


def episodes_to_threshold(successes, threshold=DEFAULT_SUCCESS_THRESHOLD,
                          window=DEFAULT_SUCCESS_WINDOW):
    """Number of episodes until the trailing success rate over `window`
    episodes first reaches `threshold`; None if it never does."""
    successes = np.asarray(successes, dtype=float)
    if len(successes) < window:
        return None
    rates = np.convolve(successes, np.ones(window) / window, mode='valid')
    hits = np.nonzero(rates >= threshold - 1e-12)[0]
    return None if len(hits) == 0 else int(hits[0] + window)


def value_iteration(spec, goal, gamma=DEFAULT_GAMMA, shaping=None, tol=1e-12,
                    max_iter=100000):
    """Exact optimal (V, Q) for reaching `goal` with -1 step rewards, the
    goal being terminal. With shaping, rewards are r + F(s, s') using the
    shaping gamma. Returns (keys, V, Q)."""
    _require_enumerable(spec)
    keys = envs.enumerate_keys(spec)
    succ = _transition_table(spec, keys)
    index = { k: i for i, k in enumerate(keys) }
    goal_index = index[envs.state_key(spec, goal)]
    phi = _potentials(spec, keys, shaping)
    reward = np.full(succ.shape, -1.0)
    if phi is not None:
        reward = reward + shaping.gamma * phi[succ] - phi[:, None]
    terminal = succ == goal_index
    v = np.zeros(len(keys))
    for _ in range(max_iter):
        q = reward + np.where(terminal, 0.0, gamma * v[succ])
        q[goal_index] = 0.0
        v_next = q.max(axis=1)
        if np.max(np.abs(v_next - v)) <= tol:
            v = v_next
            break
        v = v_next
    return keys, v, q


def greedy_action_sets(q, tol=1e-9):
    return [frozenset(np.nonzero(row >= row.max() - tol)[0].tolist()) for row in q]


@dataclass
class GcslConfig:
    hidden: tuple = DEFAULT_HIDDEN
    batch_size: int = DEFAULT_GCSL_BATCH_SIZE
    lr: float = DEFAULT_LR
    train_steps: int = DEFAULT_GCSL_STEPS
    seed: int = 0
    horizon_conditioned: bool = True
    max_gap: int = None
    max_horizon: int = None    # default: longest trajectory in the data
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    log_every: int = DEFAULT_LOG_EVERY

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.batch_size < 1 or self.train_steps < 0:
            raise ConfigError('invalid GCSL config {}'.format(self))


def relabel(trajs, max_gap=None):
    """Every sub-trajectory s_i .. s_j becomes (s_i, a_i, g=s_j, h=j-i)."""
    s, a, g, h = [], [], [], []
    for t in trajs:
        i, j = gap_indices(len(t), max_gap)
        s.append(t.states[i])
        a.append(t.actions[i])
        g.append(t.states[j])
        h.append(j - i)
    if not s or sum(len(x) for x in h) == 0:
        raise ValueError('no sub-trajectories to relabel')
    return (np.concatenate(s), np.concatenate(a), np.concatenate(g),
            np.concatenate(h))


class GcslPolicy:
    def __init__(self, net, num_actions, horizon_conditioned, max_horizon):
        if net.output_dim != num_actions:
            raise ValueError('policy outputs {} logits for {} actions'.format(
                net.output_dim, num_actions))
        self.net = net
        self.num_actions = num_actions
        self.horizon_conditioned = horizon_conditioned
        self.max_horizon = max_horizon

    @classmethod
    def create(cls, state_dim, num_actions, config, max_horizon, rng):
        in_dim = 2 * state_dim + (1 if config.horizon_conditioned else 0)
        net = Mlp([in_dim] + list(config.hidden) + [num_actions], rng=rng)
        return cls(net, num_actions, config.horizon_conditioned, max_horizon)

    def inputs(self, s, g, h):
        s, g = np.atleast_2d(s), np.atleast_2d(g)
        if not self.horizon_conditioned:
            return np.concatenate([s, g], axis=1)
        h = np.broadcast_to(np.asarray(h, dtype=float), (len(s),))
        h = np.minimum(h / self.max_horizon, 1.0)
        return np.concatenate([s, g, h[:, None]], axis=1)

    def logits(self, s, g, h=0):
        return self.net.forward(self.inputs(s, g, h))


def gcsl_act(policy, s, g, h_remaining=0):
    """Greedy action; ties go to the lowest action index."""
    return int(np.argmax(policy.logits(s, g, h_remaining)[0]))


@timed
def gcsl_train(trajs, config, num_actions):
    """Returns (policy, history) with history rows (step, cross-entropy)."""
    if not trajs:
        raise ValueError('empty dataset')
    s, a, g, h = relabel(trajs, config.max_gap)
    max_horizon = config.max_horizon or max(len(t) for t in trajs)
    init_seq, sample_seq = np.random.SeedSequence(config.seed).spawn(2)
    policy = GcslPolicy.create(s.shape[1], num_actions, config, max_horizon,
                               np.random.default_rng(init_seq))
    rng = np.random.default_rng(sample_seq)
    x = policy.inputs(s, g, h)
    optimizer = AdamW(policy.net.params(), lr=config.lr,
                      weight_decay=config.weight_decay)
    names = policy.net.param_names()
    info('Training GCSL ({}) on {} relabeled tuples for {} steps'.format(
        'horizon' if config.horizon_conditioned else 'no horizon', len(a),
        config.train_steps))
    history = []
    for step in range(1, config.train_steps+1):
        idx = rng.integers(len(a), size=config.batch_size)
        logits, cache = policy.net.forward_cached(x[idx])
        loss, grad = softmax_cross_entropy(logits, a[idx])
        grads, _ = policy.net.backward(cache, grad)
        optimizer.step(policy.net.params(), grads, names)
        if step % config.log_every == 0 or step == config.train_steps:
            history.append((step, float(loss)))
            info('step {}: cross-entropy {:.5f}'.format(step, loss))
    return policy, history


def gcsl_episode(spec, policy, goal, budget, start=None, embedding=None):
    goal = np.asarray(goal, dtype=float)
    env = envs.Env(spec, goal)
    s = env.reset(seed=spec.seed, start=start)
    states, actions = [s], []
    while not env.reached_goal and not env.done and env.steps < budget:
        a = gcsl_act(policy, s, goal, budget - env.steps)
        s, _, _ = env.step(a)
        states.append(s)
        actions.append(a)
    final_distance = float('nan') if embedding is None else float(
        embedding.dist(s, goal))
    return EpisodeResult(
        trajectory=Trajectory(np.array(states), np.array(actions, dtype=int)),
        success=bool(env.reached_goal),
        final_distance=final_distance,
        start=states[0],
        goal=goal,
    )


def save_policy(path, policy):
    save_networks(path, [policy.net], kind='gcsl',
                  num_actions=policy.num_actions,
                  horizon_conditioned=policy.horizon_conditioned,
                  max_horizon=policy.max_horizon)


def load_policy(path):
    header, nets = restore_networks(path)
    if header.get('kind') != 'gcsl' or len(nets) != 1:
        raise CheckpointError(path, 'not a GCSL policy checkpoint')
    try:
        return GcslPolicy(nets[0], header['num_actions'],
                          header['horizon_conditioned'], header['max_horizon'])
    except (KeyError, ValueError) as e:
        raise CheckpointError(path, e)
