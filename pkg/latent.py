"""Latent transition model and Plan-Dist, a random-shooting MPC that
scores action sequences by their summed latent distance to the goal."""

import numpy as np

from dataclasses import dataclass, field, asdict
from logging import info

from common import ConfigError, CheckpointError, timed
from config import DEFAULT_DYN_HIDDEN, DEFAULT_BATCH_SIZE, DEFAULT_LR
from config import DEFAULT_DYN_STEPS, DEFAULT_WEIGHT_DECAY, DEFAULT_LOG_EVERY
from config import DEFAULT_HORIZON, DEFAULT_NUM_SEQUENCES, DEFAULT_PLAN_BUDGET
from neural import Mlp, AdamW, save_networks, restore_networks
from embed import latent_distance
from trajdata import Trajectory, transition_arrays
import envs


@dataclass
class DynamicsConfig:
    hidden: int = DEFAULT_DYN_HIDDEN
    batch_size: int = DEFAULT_BATCH_SIZE
    lr: float = DEFAULT_LR
    train_steps: int = DEFAULT_DYN_STEPS
    seed: int = 0
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    residual: bool = True
    log_every: int = DEFAULT_LOG_EVERY

    def __post_init__(self):
        if self.hidden < 1 or self.batch_size < 1 or self.train_steps < 0:
            raise ConfigError('invalid dynamics config {}'.format(self))


@dataclass
class PlanConfig:
    horizon: int = DEFAULT_HORIZON
    num_sequences: int = DEFAULT_NUM_SEQUENCES
    goal_eps: float = None
    max_env_steps: int = DEFAULT_PLAN_BUDGET
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 1 or self.num_sequences < 1:
            raise ConfigError('horizon and num_sequences must be >= 1')
        if self.max_env_steps < 1:
            raise ConfigError('max_env_steps must be >= 1')
        if self.goal_eps is not None and self.goal_eps < 0:
            raise ConfigError('goal_eps must be non-negative')


class LatentDynamics:
    """With residual=True the joint head predicts z' - z."""

    def __init__(self, state_branch, action_branch, joint_head, residual=True):
        if joint_head.input_dim != state_branch.output_dim + action_branch.output_dim:
            raise ValueError('joint head input does not match branch outputs')
        if joint_head.output_dim != state_branch.input_dim:
            raise ValueError('dynamics output dim must equal embed dim')
        self.state_branch = state_branch
        self.action_branch = action_branch
        self.joint_head = joint_head
        self.residual = residual

    @classmethod
    def create(cls, embed_dim, num_actions, config, rng=None):
        if rng is None:
            rng = np.random.default_rng(config.seed)
        h = config.hidden
        return cls(
            Mlp([embed_dim, h, h], rng=rng, output_activation='selu'),
            Mlp([num_actions, h, h], rng=rng, output_activation='selu'),
            Mlp([2*h, h, embed_dim], rng=rng),
            residual=config.residual,
        )

    @property
    def embed_dim(self):
        return self.state_branch.input_dim

    @property
    def num_actions(self):
        return self.action_branch.input_dim

    @property
    def nets(self):
        return [self.state_branch, self.action_branch, self.joint_head]

    def params(self):
        return [p for net in self.nets for p in net.params()]

    def param_names(self):
        return [
            '{}.{}'.format(prefix, name)
            for prefix, net in zip(('state', 'action', 'joint'), self.nets)
            for name in net.param_names()
        ]

    def _one_hot(self, a):
        a = np.asarray(a, dtype=int).reshape(-1)
        if np.any((a < 0) | (a >= self.num_actions)):
            raise ValueError('action outside [0, {})'.format(self.num_actions))
        return np.eye(self.num_actions)[a]

    def forward_cached(self, z, a):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        if z.shape[1] != self.embed_dim:
            raise ValueError('expected latent dim {}, got {}'.format(
                self.embed_dim, z.shape[1]))
        hs, state_cache = self.state_branch.forward_cached(z)
        ha, action_cache = self.action_branch.forward_cached(self._one_hot(a))
        out, head_cache = self.joint_head.forward_cached(
            np.concatenate([hs, ha], axis=1))
        if self.residual:
            out = out + z
        return out, (state_cache, action_cache, head_cache)

    def predict(self, z, a):
        z = np.asarray(z, dtype=float)
        out = self.forward_cached(z, a)[0]
        return out[0] if z.ndim == 1 else out

    def backward(self, cache, grad_out):
        """Parameter gradients in params() order. z is an input, not a
        parameter: the embedding stays frozen."""
        state_cache, action_cache, head_cache = cache
        head_grads, dh = self.joint_head.backward(head_cache, grad_out)
        width = self.state_branch.output_dim
        state_grads, _ = self.state_branch.backward(state_cache, dh[:, :width])
        action_grads, _ = self.action_branch.backward(action_cache, dh[:, width:])
        return state_grads + action_grads + head_grads


@timed
def train_dynamics(trajs, embedding, config, num_actions):
    """Returns (dynamics, history) with history rows (step, mean loss)."""
    s, a, s_next = transition_arrays(trajs)
    if len(a) == 0:
        raise ValueError('no transitions to train on')
    z, z_next = embedding.embed(s), embedding.embed(s_next)
    init_seq, sample_seq = np.random.SeedSequence(config.seed).spawn(2)
    dyn = LatentDynamics.create(embedding.config.embed_dim, num_actions,
                                config, np.random.default_rng(init_seq))
    rng = np.random.default_rng(sample_seq)
    optimizer = AdamW(dyn.params(), lr=config.lr,
                      weight_decay=config.weight_decay)
    names = dyn.param_names()
    info('Training dynamics on {} transitions for {} steps'.format(
        len(a), config.train_steps))
    history = []
    for step in range(1, config.train_steps+1):
        idx = rng.integers(len(a), size=config.batch_size)
        pred, cache = dyn.forward_cached(z[idx], a[idx])
        err = pred - z_next[idx]
        grads = dyn.backward(cache, 2 * err)
        optimizer.step(dyn.params(), grads, names)
        if step % config.log_every == 0 or step == config.train_steps:
            row = (step, float((err * err).sum() / config.batch_size))
            history.append(row)
            info('step {}: loss {:.5f}'.format(*row))
    return dyn, history


def rollout(dyn, z0, actions):
    z = np.asarray(z0, dtype=float)
    zs = []
    for a in actions:
        z = dyn.predict(z, a)
        zs.append(z)
    return zs


def rollout_batch(dyn, z0, action_seqs):
    """Roll N sequences from one start latent: (N, H) -> (N, H, D)."""
    action_seqs = np.asarray(action_seqs, dtype=int)
    n, horizon = action_seqs.shape
    z = np.tile(np.asarray(z0, dtype=float), (n, 1))
    zs = np.empty((n, horizon, dyn.embed_dim))
    for t in range(horizon):
        z = dyn.forward_cached(z, action_seqs[:, t])[0]
        zs[:, t] = z
    return zs


def score_sequences(dyn, embedding, s, goal, action_seqs):
    z0, z_goal = embedding.embed(s), embedding.embed(goal)
    zs = rollout_batch(dyn, z0, action_seqs)
    start = latent_distance(z0, z_goal, embedding.norm)
    return -start - latent_distance(zs, z_goal, embedding.norm).sum(axis=1)


def score_sequence(dyn, embedding, s, goal, actions):
    z0, z_goal = embedding.embed(s), embedding.embed(goal)
    score = -latent_distance(z0, z_goal, embedding.norm)
    for z in rollout(dyn, z0, actions):
        score -= latent_distance(z, z_goal, embedding.norm)
    return float(score)


@dataclass
class EpisodeResult:
    trajectory: Trajectory
    success: bool
    final_distance: float
    start: np.ndarray
    goal: np.ndarray
    plans: list = field(default_factory=list)    # (chosen sequence, r_max)

    @property
    def steps(self):
        return len(self.trajectory)


def goal_test(spec, embedding, goal, goal_eps):
    if spec.enumerable:
        goal_key = envs.state_key(spec, goal)
        return lambda s: envs.state_key(spec, s) == goal_key
    if goal_eps is None:
        raise ConfigError('goal_eps is required on {}'.format(spec.id))
    z_goal = embedding.embed(goal)
    return lambda s: latent_distance(embedding.embed(s), z_goal,
                                     embedding.norm) <= goal_eps


def plan_step(spec, embedding, dyn, s, goal, config, rng):
    """Sample N sequences, return (first action, chosen sequence, r_max)."""
    seqs = rng.integers(spec.num_actions,
                        size=(config.num_sequences, config.horizon))
    scores = score_sequences(dyn, embedding, s, goal, seqs)
    best = int(np.argmax(scores))    # ties -> first sampled
    return int(seqs[best, 0]), seqs[best], float(scores[best])


def plan_dist_episode(spec, embedding, dyn, goal, config, start=None,
                      rng=None):
    if rng is None:
        rng = np.random.default_rng(config.seed)
    goal = np.asarray(goal, dtype=float)
    reached = goal_test(spec, embedding, goal, config.goal_eps)
    env = envs.Env(spec, goal)
    s = env.reset(seed=spec.seed, start=start)
    states, actions, plans = [s], [], []
    success = reached(s)
    while not success and not env.done and env.steps < config.max_env_steps:
        action, seq, r_max = plan_step(spec, embedding, dyn, s, goal, config,
                                       rng)
        plans.append((seq, r_max))
        s, _, _ = env.step(action)
        states.append(s)
        actions.append(action)
        success = reached(s)
    final_distance = float(embedding.dist(s, goal))
    info('Plan-Dist episode: {} after {} steps, final distance {:.3f}'.format(
        'goal reached' if success else 'failed', len(actions), final_distance))
    return EpisodeResult(
        trajectory=Trajectory(np.array(states), np.array(actions, dtype=int)),
        success=bool(success),
        final_distance=final_distance,
        start=states[0],
        goal=goal,
        plans=plans,
    )


def adjacent_distances(embedding, trajs):
    s, _, s_next = transition_arrays(trajs)
    moved = np.any(s != s_next, axis=1)
    return embedding.dist(s[moved], s_next[moved])


def default_goal_eps(embedding, trajs):
    return 0.5 * float(adjacent_distances(embedding, trajs).mean())


def one_step_error(dyn, embedding, trajs):
    """(mean L1 latent prediction error, its ratio to the mean adjacent
    embedded distance)."""
    s, a, s_next = transition_arrays(trajs)
    pred = dyn.predict(embedding.embed(s), a)
    error = float(np.abs(pred - embedding.embed(s_next)).sum(axis=1).mean())
    return error, error / float(adjacent_distances(embedding, trajs).mean())


def save_dynamics(path, dyn, config):
    save_networks(path, dyn.nets, kind='dynamics', config=asdict(config))


def load_dynamics(path):
    header, nets = restore_networks(path)
    if header.get('kind') != 'dynamics' or len(nets) != 3:
        raise CheckpointError(path, 'not a dynamics checkpoint')
    try:
        config = DynamicsConfig(**header['config'])
        return LatentDynamics(*nets, residual=config.residual)
    except (TypeError, KeyError, ValueError) as e:
        raise CheckpointError(path, 'bad dynamics config ({})'.format(e))
