"""Exact minimum action distances by breadth-first search, and the metrics
that compare learned embeddings and planners against them."""

import json

import numpy as np
import networkx as nx

from dataclasses import dataclass, fields, asdict
from logging import info
from scipy.stats import spearmanr, binomtest

from common import DatasetParseError, timed
from config import DEFAULT_VIOLATION_TOLERANCE
from embed import pairwise_distances, latent_distance, constraint_violation_rate
import envs

UNREACHABLE = -1


@dataclass
class MadTable:
    spec: envs.EnvSpec
    keys: list
    directed: np.ndarray    # (S, S) ints, UNREACHABLE where no path exists

    def __post_init__(self):
        self.index = { k: i for i, k in enumerate(self.keys) }

    def __len__(self):
        return len(self.keys)

    def lookup(self, s):
        return self.index[envs.state_key(self.spec, s)]

    def mad(self, s, s_prime):
        """Directed MAD(s, s'); None when s' is unreachable from s."""
        d = self.directed[self.lookup(s), self.lookup(s_prime)]
        return None if d == UNREACHABLE else int(d)

    def as_float(self):
        return np.where(self.directed == UNREACHABLE, np.inf,
                        self.directed.astype(float))

    def symmetric(self):
        """min(MAD(s, s'), MAD(s', s)), inf where neither direction exists."""
        d = self.as_float()
        return np.minimum(d, d.T)

    def audit_triangle(self):
        d = self.as_float()
        for v in range(len(self)):
            if np.any(d > d[:, v][:, None] + d[v, :][None, :]):
                return False
        return True

    def audit_one_step(self):
        succ = np.array([
            [self.index[envs.transition_key(self.spec, k, a)]
             for a in range(self.spec.num_actions)]
            for k in self.keys
        ])
        d = self.as_float()
        expected = 1 + d[succ].min(axis=1)
        np.fill_diagonal(expected, 0)
        return bool(np.array_equal(d, expected))


@timed
def compute_mad(spec):
    if not spec.deterministic:
        raise NotImplementedError('MAD is undefined under random slips '
                                  '(slip_prob {})'.format(spec.slip_prob))
    keys = envs.enumerate_keys(spec)
    index = { k: i for i, k in enumerate(keys) }
    graph = nx.DiGraph()
    graph.add_nodes_from(range(len(keys)))
    for i, k in enumerate(keys):
        for a in range(spec.num_actions):
            j = index[envs.transition_key(spec, k, a)]
            if j != i:
                graph.add_edge(i, j)
    directed = np.full((len(keys), len(keys)), UNREACHABLE, dtype=int)
    for source, lengths in nx.all_pairs_shortest_path_length(graph):
        for target, length in lengths.items():
            directed[source, target] = length
    info('MAD table: {} states, {} unreachable ordered pairs'.format(
        len(keys), int((directed == UNREACHABLE).sum())))
    return MadTable(spec, keys, directed)


@dataclass
class EvalReport:
    mae: float = None
    spearman: float = None
    violation_rate: float = None
    success_rate: float = None
    mean_path_ratio: float = None
    dynamics_error: float = None
    num_pairs: int = None
    num_unreachable: int = None
    num_episodes: int = None

    def update(self, other):
        for f in fields(self):
            value = getattr(other, f.name)
            if value is not None:
                setattr(self, f.name, value)
        return self


def write_report(path, report):
    with open(path, 'w') as out:
        for key, value in asdict(report).items():
            print('{} {}'.format(key, 'undefined' if value is None else
                                 repr(value)), file=out)


def read_report(path):
    values = {}
    with open(path) as f:
        for ln, l in enumerate(f, start=1):
            fields_ = l.split()
            if len(fields_) != 2:
                raise DatasetParseError(path, ln, 'expected "key value"')
            key, value = fields_
            if value == 'undefined':
                values[key] = None
            elif key.startswith('num_'):
                values[key] = int(value)
            else:
                values[key] = float(value)
    return EvalReport(**values)


def evaluate_embedding(embedding, mad, pairs='all', rng=None,
                       training_pairs=None,
                       tolerance=DEFAULT_VIOLATION_TOLERANCE):
    """MAE and Spearman of embedded distances against the symmetric MAD over
    reachable pairs (all unordered pairs, or `pairs` random ones), plus the
    violation rate over training pairs (s, s', d_td) if given."""
    states = np.array([envs.features(mad.spec, k) for k in mad.keys])
    z = embedding.embed(states)
    target = mad.symmetric()
    if pairs == 'all':
        i, j = np.triu_indices(len(mad), k=1)
        distance = pairwise_distances(z, embedding.norm, chunk=64)[i, j]
    else:
        rng = rng or np.random.default_rng(0)
        i = rng.integers(len(mad), size=pairs)
        j = rng.integers(len(mad), size=pairs)
        keep = i != j
        i, j = i[keep], j[keep]
        distance = latent_distance(z[i], z[j], embedding.norm)
    target = target[i, j]
    finite = np.isfinite(target)
    if not np.any(finite):
        raise ValueError('no state pairs with finite MAD')
    distance, target = distance[finite], target[finite]
    report = EvalReport(
        mae=float(np.abs(distance - target).mean()),
        spearman=float(spearmanr(distance, target).correlation),
        num_pairs=int(finite.sum()),
        num_unreachable=int((~finite).sum()),
    )
    if training_pairs is not None:
        s, s_prime, d_td = training_pairs
        report.violation_rate = constraint_violation_rate(
            embedding, s, s_prime, d_td, tolerance)
    return report


def episode_record(result):
    return {
        'start': [float(v) for v in result.start],
        'goal': [float(v) for v in result.goal],
        'steps': int(result.steps),
        'success': bool(result.success),
        'final_distance': float(result.final_distance),
    }


def save_episode_reports(path, results):
    with open(path, 'w') as out:
        for result in results:
            print(json.dumps(episode_record(result)), file=out)


def load_episode_reports(path):
    records = []
    with open(path) as f:
        for ln, l in enumerate(f, start=1):
            try:
                records.append(json.loads(l))
            except ValueError as e:
                raise DatasetParseError(path, ln, 'bad episode record ({})'.format(e))
    return records


def _record(r):
    return r if isinstance(r, dict) else episode_record(r)


def evaluate_planner(episodes, mad=None):
    """Success rate, and mean realized steps / MAD(start, goal) over the
    successful episodes whose start differs from the goal."""
    records = [_record(r) for r in episodes]
    if not records:
        raise ValueError('no episode reports')
    success = [r['success'] for r in records]
    ratios = []
    if mad is not None:
        for r in records:
            if not r['success']:
                continue
            optimal = mad.mad(np.array(r['start']), np.array(r['goal']))
            if optimal:
                ratios.append(r['steps'] / optimal)
    return EvalReport(
        success_rate=float(np.mean(success)),
        mean_path_ratio=float(np.mean(ratios)) if ratios else None,
        num_episodes=len(records),
    )


def sign_test(a_successes, b_successes):
    """One-sided paired sign test that a beats b; ties are dropped."""
    a, b = np.asarray(a_successes, dtype=float), np.asarray(b_successes, dtype=float)
    wins, losses = int(np.sum(a > b)), int(np.sum(a < b))
    if wins + losses == 0:
        return 1.0
    return float(binomtest(wins, wins + losses, 0.5, alternative='greater').pvalue)
