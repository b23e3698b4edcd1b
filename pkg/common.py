#!/usr/bin/env python3

import sys
import os
import json
import hashlib

import numpy as np
import scipy
import networkx

from dataclasses import dataclass, field, asdict
from functools import wraps
from time import time
from argparse import ArgumentParser
from logging import info

try:
    import tomllib
except ImportError:    # Python < 3.11
    import tomli as tomllib

from config import DEFAULT_EMBED_DIM, DEFAULT_NORM, DEFAULT_ALPHA_EXPONENT
from config import DEFAULT_BATCH_SIZE, DEFAULT_LR, DEFAULT_WEIGHT_DECAY
from config import DEFAULT_EMBED_STEPS, DEFAULT_DYN_STEPS, DEFAULT_LOG_EVERY
from config import DEFAULT_PER_ALPHA, DEFAULT_PER_EPSILON, DEFAULT_PRIORITY
from config import DEFAULT_HORIZON, DEFAULT_NUM_SEQUENCES, DEFAULT_PLAN_BUDGET
from config import DEFAULT_NUM_GOALS, DEFAULT_Q_EPISODES, DEFAULT_Q_LR
from config import DEFAULT_GAMMA, DEFAULT_EPSILON_START, DEFAULT_EPSILON_END
from config import DEFAULT_EPSILON_DECAY_EPISODES, DEFAULT_GCSL_STEPS
from config import DEFAULT_GCSL_BATCH_SIZE, DEFAULT_NUM_TRAJECTORIES
from config import DEFAULT_COLLECT_EPSILON, DEFAULT_PORT, MANIFEST_SUFFIX
from config import DEFAULT_DYN_HIDDEN


class ConfigError(ValueError):
    pass


class DatasetParseError(ValueError):
    def __init__(self, path, line_number, message):
        super().__init__('{} on {} line {}'.format(message, path, line_number))
        self.path = path
        self.line_number = line_number


class CheckpointError(ValueError):
    def __init__(self, path, message):
        super().__init__('failed to load checkpoint {}: {}'.format(
            path, message))
        self.path = path


class EmptyBufferError(ValueError):
    pass


class PipelineError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__('stage {} failed: {}'.format(stage, cause))
        self.stage = stage


def print_versions(out=sys.stderr):
    print('Using numpy {}'.format(np.__version__), file=out)
    print('Using scipy {}'.format(scipy.__version__), file=out)
    print('Using networkx {}'.format(networkx.__version__), file=out)


def timed(f, out=sys.stderr):
    @wraps(f)
    def wrapper(*args, **kwargs):
        start = time()
        result = f(*args, **kwargs)
        print('@timed: {} completed in {:.1f} sec'.format(
            f.__name__, time()-start), file=out, flush=True)
        return result
    return wrapper


def load_toml(path):
    try:
        with open(path, 'rb') as f:
            return tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError('invalid config file {}: {}'.format(path, e))


def parse_int_tuple(s):
    """Parse "x,y" or "x,y,k" into a tuple of ints."""
    try:
        return tuple(int(v) for v in s.split(','))
    except ValueError:
        raise ConfigError('expected comma-separated integers, got {!r}'.format(
            s))


def argument_parser(mode):
    argparser = ArgumentParser(prog='cli.py {}'.format(mode))
    argparser.add_argument(
        '--verbose', default=False, action='store_true',
        help='Log progress at INFO level'
    )
    if mode in ('collect', 'plan', 'shape-train', 'gcsl-eval', 'eval',
                'serve'):
        argparser.add_argument(
            '--env', required=True,
            help='Environment config file (TOML)'
        )
    if mode in ('train-embed', 'train-dyn', 'gcsl-train'):
        argparser.add_argument(
            '--dataset', required=True,
            help='Trajectory dataset (JSON lines)'
        )
    if mode in ('train-dyn', 'plan', 'eval', 'serve'):
        argparser.add_argument(
            '--embed', required=True,
            help='Embedding checkpoint'
        )
    if mode in ('train-dyn', 'gcsl-train'):
        argparser.add_argument(
            '--env', default=None,
            help='Environment config (default: infer actions from the data)'
        )
    if mode == 'gcsl-eval':
        argparser.add_argument(
            '--embed', default=None,
            help='Embedding checkpoint (adds final embedded distance)'
        )
    if mode == 'shape-train':
        argparser.add_argument(
            '--embed', default=None,
            help='Embedding checkpoint providing the potential'
        )
    if mode in ('plan', 'serve'):
        argparser.add_argument(
            '--dyn', required=True,
            help='Latent dynamics checkpoint'
        )
    if mode in ('collect', 'train-embed', 'train-dyn', 'gcsl-train',
                'eval'):
        argparser.add_argument(
            '--out', required=True,
            help='Output file'
        )
    if mode == 'collect':
        argparser.add_argument(
            '--policy', default='random',
            help='"random" or path to a saved Q-table'
        )
        argparser.add_argument(
            '--epsilon', type=float, default=DEFAULT_COLLECT_EPSILON,
            help='Exploration rate when collecting with a Q-table'
        )
        argparser.add_argument(
            '--n_traj', '--n-traj', type=int,
            default=DEFAULT_NUM_TRAJECTORIES,
            help='Number of trajectories to collect'
        )
    if mode in ('train-embed', 'train-dyn', 'gcsl-train'):
        argparser.add_argument(
            '--steps', type=int, default=None,
            help='Number of optimizer steps'
        )
        argparser.add_argument(
            '--batch', type=int, default=None,
            help='Mini-batch size'
        )
        argparser.add_argument(
            '--lr', type=float, default=DEFAULT_LR,
            help='AdamW learning rate'
        )
        argparser.add_argument(
            '--weight_decay', '--weight-decay', type=float,
            default=DEFAULT_WEIGHT_DECAY,
            help='AdamW decoupled weight decay'
        )
        argparser.add_argument(
            '--log_every', '--log-every', type=int, default=DEFAULT_LOG_EVERY,
            help='Log training metrics every N steps'
        )
        argparser.add_argument(
            '--history', default=None,
            help='Write training curve (CSV) to this file'
        )
    if mode == 'train-embed':
        argparser.add_argument(
            '--dim', type=int, default=DEFAULT_EMBED_DIM,
            help='Embedding dimension'
        )
        argparser.add_argument(
            '--norm', choices=('l1', 'l2'), default=DEFAULT_NORM,
            help='Norm used for embedded distances'
        )
        argparser.add_argument(
            '--alpha', type=float, default=DEFAULT_ALPHA_EXPONENT,
            help='Exponent of the 1/d weighting'
        )
        argparser.add_argument(
            '--no-penalty', dest='penalty', default=True,
            action='store_false',
            help='Drop the upper-bound penalty term'
        )
        argparser.add_argument(
            '--priority', choices=('penalty', 'loss'),
            default=DEFAULT_PRIORITY,
            help='Per-sample value written back as replay priority'
        )
        argparser.add_argument(
            '--per_alpha', '--per-alpha', type=float,
            default=DEFAULT_PER_ALPHA,
            help='Replay priority exponent'
        )
        argparser.add_argument(
            '--per_epsilon', '--per-epsilon', type=float,
            default=DEFAULT_PER_EPSILON,
            help='Replay priority offset'
        )
    if mode in ('train-embed', 'gcsl-train'):
        argparser.add_argument(
            '--max_gap', '--max-gap', type=int, default=None,
            help='Maximum trajectory distance of extracted pairs'
        )
    if mode == 'train-dyn':
        argparser.add_argument(
            '--hidden', type=int, default=DEFAULT_DYN_HIDDEN,
            help='Width of the dynamics branches'
        )
    if mode == 'gcsl-train':
        argparser.add_argument(
            '--no-horizon', dest='horizon_conditioned', default=True,
            action='store_false',
            help='Train the horizon-less variant'
        )
        argparser.add_argument(
            '--max_horizon', '--max-horizon', type=int, default=None,
            help='Horizon normalizer (default: longest trajectory)'
        )
    if mode in ('plan', 'gcsl-eval'):
        argparser.add_argument(
            '--goals', type=int, default=DEFAULT_NUM_GOALS,
            help='Number of random goals (one episode each)'
        )
        argparser.add_argument(
            '--budget', type=int, default=DEFAULT_PLAN_BUDGET,
            help='Maximum environment steps per episode'
        )
        argparser.add_argument(
            '--report', required=True,
            help='Per-episode report (JSON lines)'
        )
    if mode in ('plan', 'serve'):
        argparser.add_argument(
            '--horizon', type=int, default=DEFAULT_HORIZON,
            help='Planning horizon H'
        )
        argparser.add_argument(
            '--samples', type=int, default=DEFAULT_NUM_SEQUENCES,
            help='Number N of sampled action sequences'
        )
        argparser.add_argument(
            '--goal_eps', '--goal-eps', type=float, default=None,
            help='Embedded goal tolerance for non-enumerable envs'
        )
    if mode == 'plan':
        argparser.add_argument(
            '--dataset', default=None,
            help='Dataset used to derive the default goal tolerance'
        )
    if mode == 'gcsl-eval':
        argparser.add_argument(
            '--policy', required=True,
            help='GCSL policy checkpoint'
        )
    if mode == 'shape-train':
        argparser.add_argument(
            '--goal', required=True,
            help='Goal cell as "x,y" (or "x,y,k" on keydoor)'
        )
        argparser.add_argument(
            '--episodes', type=int, default=DEFAULT_Q_EPISODES,
            help='Number of Q-learning episodes'
        )
        group = argparser.add_mutually_exclusive_group()
        group.add_argument(
            '--shaped', dest='shaped', default=True, action='store_true',
            help='Use the learned-distance potential (default)'
        )
        group.add_argument(
            '--unshaped', dest='shaped', action='store_false',
            help='Use the original reward only'
        )
        argparser.add_argument(
            '--gamma', type=float, default=DEFAULT_GAMMA,
            help='Discount factor'
        )
        argparser.add_argument(
            '--q_lr', '--q-lr', type=float, default=DEFAULT_Q_LR,
            help='Q-learning step size'
        )
        argparser.add_argument(
            '--epsilon_start', '--epsilon-start', type=float,
            default=DEFAULT_EPSILON_START,
            help='Initial exploration rate'
        )
        argparser.add_argument(
            '--epsilon_end', '--epsilon-end', type=float,
            default=DEFAULT_EPSILON_END,
            help='Final exploration rate'
        )
        argparser.add_argument(
            '--epsilon_decay', '--epsilon-decay', type=int,
            default=DEFAULT_EPSILON_DECAY_EPISODES,
            help='Episodes of linear exploration decay'
        )
        argparser.add_argument(
            '--curve', required=True,
            help='Per-episode learning curve (CSV)'
        )
        argparser.add_argument(
            '--qtable', default=None,
            help='Save the learned Q-table to this file'
        )
    if mode == 'eval':
        argparser.add_argument(
            '--dyn', default=None,
            help='Latent dynamics checkpoint (adds dynamics error)'
        )
        argparser.add_argument(
            '--dataset', default=None,
            help='Training dataset (adds violation rate)'
        )
        argparser.add_argument(
            '--plan_report', '--plan-report', default=None,
            help='Plan episode report (adds planner metrics)'
        )
    if mode == 'pipeline':
        argparser.add_argument(
            'config',
            help='Pipeline config file (TOML)'
        )
        argparser.add_argument(
            '--force', default=False, action='store_true',
            help='Run every stage even if its outputs are current'
        )
    if mode == 'serve':
        argparser.add_argument(
            '--port', type=int, default=DEFAULT_PORT,
            help='Port to listen to'
        )
    seed_required = mode not in ('eval', 'pipeline', 'serve')
    argparser.add_argument(
        '--seed', type=int, required=seed_required, default=None,
        help='Random seed controlling env, init, sampling and planning'
    )
    return argparser


def git_hash(path):
    """Content hash computed the way git hashes blobs."""
    with open(path, 'rb') as f:
        data = f.read()
    h = hashlib.sha1()
    h.update('blob {}\0'.format(len(data)).encode('ascii'))
    h.update(data)
    return h.hexdigest()


def manifest_path(artifact):
    return artifact + MANIFEST_SUFFIX


@dataclass
class RunManifest:
    command: str
    flags: dict
    seed: int = None
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    duration: float = 0.0

    def save(self, path):
        with open(path, 'w') as out:
            json.dump(asdict(self), out, indent=4, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls(**json.load(f))

    def is_current(self, command, flags):
        """True if this manifest was made by the same command and flags and
        neither its inputs nor its outputs have changed since."""
        if self.command != command or self.flags != flags:
            return False
        for path, digest in list(self.inputs.items()) + list(
                self.outputs.items()):
            if not os.path.exists(path) or git_hash(path) != digest:
                return False
        return True


def write_manifests(command, flags, seed, inputs, outputs, duration):
    manifest = RunManifest(
        command=command,
        flags=flags,
        seed=seed,
        inputs={ p: git_hash(p) for p in inputs },
        outputs={ p: git_hash(p) for p in outputs },
        duration=duration,
    )
    for path in outputs:
        manifest.save(manifest_path(path))
        info('Wrote {}'.format(manifest_path(path)))
    return manifest


def write_csv(path, header, rows):
    with open(path, 'w') as out:
        print(','.join(header), file=out)
        for row in rows:
            print(','.join(_csv_value(v) for v in row), file=out)


def _csv_value(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)
