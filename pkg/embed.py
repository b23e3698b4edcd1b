"""State embedding whose pairwise distances approximate the minimum action
distance, trained from trajectory distances alone.

Per pair (s, s', d) with residual r = ||phi(s) - phi(s')|| - d and weight
w = 1 / d**alpha the loss is w * r**2 plus the upper-bound penalty
w * max(0, r)**2. The penalty values double as replay priorities.
"""

import numpy as np

from collections import namedtuple
from dataclasses import dataclass, asdict
from logging import info

from common import ConfigError, CheckpointError, timed
from config import DEFAULT_EMBED_DIM, DEFAULT_HIDDEN, DEFAULT_NORM
from config import DEFAULT_ALPHA_EXPONENT, DEFAULT_BATCH_SIZE, DEFAULT_LR
from config import DEFAULT_EMBED_STEPS, DEFAULT_WEIGHT_DECAY, DEFAULT_LOG_EVERY
from config import DEFAULT_PER_ALPHA, DEFAULT_PER_EPSILON, DEFAULT_PRIORITY
from config import DEFAULT_VIOLATION_TOLERANCE
from neural import Mlp, AdamW, save_networks, restore_networks
from trajdata import PrioritizedBuffer

NORMS = ('l1', 'l2')
CHUNK_SIZE = 8192


@dataclass
class EmbedConfig:
    embed_dim: int = DEFAULT_EMBED_DIM
    norm: str = DEFAULT_NORM
    alpha_exponent: float = DEFAULT_ALPHA_EXPONENT
    penalty_enabled: bool = True
    batch_size: int = DEFAULT_BATCH_SIZE
    lr: float = DEFAULT_LR
    train_steps: int = DEFAULT_EMBED_STEPS
    seed: int = 0
    hidden: tuple = DEFAULT_HIDDEN
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    max_gap: int = None
    per_alpha: float = DEFAULT_PER_ALPHA
    per_epsilon: float = DEFAULT_PER_EPSILON
    priority: str = DEFAULT_PRIORITY
    log_every: int = DEFAULT_LOG_EVERY

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.embed_dim < 1:
            raise ConfigError('embed_dim must be >= 1, got {}'.format(
                self.embed_dim))
        if self.norm not in NORMS:
            raise ConfigError('norm must be one of {}, got {!r}'.format(
                NORMS, self.norm))
        if self.alpha_exponent < 0:
            raise ConfigError('alpha_exponent must be >= 0, got {}'.format(
                self.alpha_exponent))
        if self.priority not in ('penalty', 'loss'):
            raise ConfigError('priority must be "penalty" or "loss"')
        if self.batch_size < 1 or self.train_steps < 0:
            raise ConfigError('batch_size must be >= 1 and train_steps >= 0')


def latent_distance(z1, z2, norm=DEFAULT_NORM):
    diff = np.asarray(z1) - np.asarray(z2)
    if norm == 'l1':
        return np.abs(diff).sum(axis=-1)
    return np.sqrt((diff * diff).sum(axis=-1))


def pairwise_distances(z, norm=DEFAULT_NORM, chunk=256):
    n = len(z)
    out = np.empty((n, n))
    for start in range(0, n, chunk):
        out[start:start+chunk] = latent_distance(
            z[start:start+chunk, None, :], z[None, :, :], norm)
    return out


class EmbeddingModel:
    def __init__(self, net, config):
        if net.output_dim != config.embed_dim:
            raise ValueError('network output {} != embed_dim {}'.format(
                net.output_dim, config.embed_dim))
        self.net = net
        self.config = config

    @classmethod
    def create(cls, state_dim, config, rng=None):
        if rng is None:
            rng = np.random.default_rng(config.seed)
        dims = [state_dim] + list(config.hidden) + [config.embed_dim]
        return cls(Mlp(dims, rng=rng), config)

    @property
    def state_dim(self):
        return self.net.input_dim

    @property
    def norm(self):
        return self.config.norm

    def embed(self, s):
        s = np.asarray(s, dtype=float)
        if s.ndim == 2 and len(s) > CHUNK_SIZE:
            return np.concatenate([
                self.net.forward(s[i:i+CHUNK_SIZE])
                for i in range(0, len(s), CHUNK_SIZE)
            ])
        return self.net.forward(s)

    def dist(self, s, s_prime):
        return latent_distance(self.embed(s), self.embed(s_prime), self.norm)


def embed(model, s):
    return model.embed(s)


def dist(model, s, s_prime):
    return model.dist(s, s_prime)


LossResult = namedtuple(
    'LossResult', ['loss', 'penalties', 'sample_losses', 'violations', 'grads'])


def _batch_arrays(batch):
    if isinstance(batch, (list, tuple)) and not hasattr(batch, 'd_td'):
        return (np.array([p.s for p in batch]),
                np.array([p.s_prime for p in batch]),
                np.array([p.d_td for p in batch], dtype=float))
    return (np.asarray(batch.s), np.asarray(batch.s_prime),
            np.asarray(batch.d_td, dtype=float))


def pair_weights(d_td, alpha_exponent):
    return np.asarray(d_td, dtype=float) ** -alpha_exponent


def loss_batch(model, batch):
    s, s_prime, d = _batch_arrays(batch)
    if np.any(d < 1):
        raise ValueError('trajectory distances must be >= 1')
    cfg = model.config
    n = len(d)
    z, cache = model.net.forward_cached(np.concatenate([s, s_prime]))
    diff = z[:n] - z[n:]
    if cfg.norm == 'l1':
        distance = np.abs(diff).sum(axis=1)
        ddist = np.sign(diff)
    else:
        distance = np.sqrt((diff * diff).sum(axis=1))
        safe = np.where(distance > 0, distance, 1.0)
        ddist = np.where(distance[:, None] > 0, diff / safe[:, None], 0.0)
    w = pair_weights(d, cfg.alpha_exponent)
    residual = distance - d
    violation = np.maximum(residual, 0.0)
    penalties = w * violation ** 2
    sample_losses = w * residual ** 2
    dloss = 2 * w * residual
    if cfg.penalty_enabled:
        sample_losses = sample_losses + penalties
        dloss = dloss + 2 * w * violation
    gz = dloss[:, None] * ddist
    grads, _ = model.net.backward(cache, np.concatenate([gz, -gz]))
    return LossResult(float(sample_losses.sum()), penalties, sample_losses,
                      violation, grads)


def constraint_violation_rate(model, s, s_prime, d_td,
                              tolerance=DEFAULT_VIOLATION_TOLERANCE):
    if len(d_td) == 0:
        return 0.0
    return float(np.mean(model.dist(s, s_prime) > np.asarray(d_td) + tolerance))


@timed
def train_embedding(trajs, config, buffer=None):
    """Returns (model, history) with history rows
    (step, mean sample loss, mean violation, batch violation rate)."""
    if buffer is None:
        buffer = PrioritizedBuffer.from_trajectories(
            trajs, config.max_gap, alpha=config.per_alpha,
            epsilon=config.per_epsilon)
    if len(buffer) == 0:
        raise ValueError('no trajectory pairs to train on')
    init_seq, sample_seq = np.random.SeedSequence(config.seed).spawn(2)
    model = EmbeddingModel.create(buffer.s.shape[1], config,
                                  np.random.default_rng(init_seq))
    rng = np.random.default_rng(sample_seq)
    optimizer = AdamW(model.net.params(), lr=config.lr,
                      weight_decay=config.weight_decay)
    names = model.net.param_names()
    info('Training embedding on {} pairs for {} steps'.format(
        len(buffer), config.train_steps))
    history = []
    for step in range(1, config.train_steps+1):
        batch = buffer.sample_batch(config.batch_size, rng)
        result = loss_batch(model, batch)
        optimizer.step(model.net.params(), result.grads, names)
        if config.priority == 'penalty':
            buffer.update_priorities(batch.indices, result.penalties)
        else:
            buffer.update_priorities(batch.indices, result.sample_losses)
        if step % config.log_every == 0 or step == config.train_steps:
            row = (step, result.loss / len(batch.d_td),
                   float(result.violations.mean()),
                   float(np.mean(result.violations > 0)))
            history.append(row)
            info('step {}: loss {:.5f}, mean violation {:.5f}, '
                 'violating {:.1%}'.format(*row))
    return model, history


def save_embedding(path, model):
    config = asdict(model.config)
    config['hidden'] = list(config['hidden'])
    save_networks(path, [model.net], kind='embedding', config=config)


def load_embedding(path):
    header, nets = restore_networks(path)
    if header.get('kind') != 'embedding' or len(nets) != 1:
        raise CheckpointError(path, 'not an embedding checkpoint')
    try:
        config = EmbedConfig(**header['config'])
    except (TypeError, KeyError, ConfigError) as e:
        raise CheckpointError(path, 'bad embedding config ({})'.format(e))
    return EmbeddingModel(nets[0], config)
