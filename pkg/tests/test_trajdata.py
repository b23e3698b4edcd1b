import numpy as np
import pytest

from common import DatasetParseError, EmptyBufferError
from envs import EnvSpec
from trajdata import Trajectory, PairSample, PrioritizedBuffer
from trajdata import extract_pairs, pair_arrays, transition_arrays
from trajdata import save_dataset, load_dataset, collect_trajectories
from trajdata import random_policy, epsilon_greedy_policy, coverage
from shaping_rl import QTable
from oracle_eval import compute_mad
import envs


def line_trajectory(n):
    """Scalar states 0, 1, ..., n."""
    return Trajectory(np.arange(n+1, dtype=float)[:, None], np.zeros(n))


def as_tuples(pairs):
    return { (float(p.s[0]), float(p.s_prime[0]), p.d_td) for p in pairs }


def filled_buffer(n, alpha=0.6, epsilon=0.1):
    buf = PrioritizedBuffer(alpha=alpha, epsilon=epsilon)
    buf.add(np.arange(n, dtype=float)[:, None],
            np.arange(n, dtype=float)[:, None] + 1, np.ones(n, dtype=int))
    return buf


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory(np.zeros((3, 2)), np.zeros(3))
    with pytest.raises(ValueError):
        Trajectory(np.array([[0.0, np.nan]]), np.zeros(0))
    assert len(Trajectory(np.zeros((1, 2)), np.zeros(0))) == 0


def test_extract_pairs_unbounded():
    pairs = extract_pairs(line_trajectory(2))
    assert as_tuples(pairs) == {(0, 1, 1), (1, 2, 1), (0, 2, 2)}


def test_extract_pairs_max_gap():
    pairs = extract_pairs(line_trajectory(2), max_gap=1)
    assert as_tuples(pairs) == {(0, 1, 1), (1, 2, 1)}


def test_extract_pairs_count():
    assert len(extract_pairs(line_trajectory(50))) == 1275
    assert len(extract_pairs(line_trajectory(50), max_gap=3)) == 50 + 49 + 48


def test_extract_pairs_single_state():
    assert extract_pairs(line_trajectory(0)) == []


def test_pair_arrays_match_extract_pairs():
    trajs = [line_trajectory(4), line_trajectory(2)]
    s, s_prime, d = pair_arrays(trajs)
    expected = [p for t in trajs for p in extract_pairs(t)]
    assert len(d) == len(expected)
    assert np.all(s_prime[:, 0] - s[:, 0] == d)


def test_transition_arrays():
    s, a, s_next = transition_arrays([line_trajectory(3)])
    assert len(a) == 3
    assert np.array_equal(s_next[:, 0], s[:, 0] + 1)


def test_pairs_never_shorter_than_mad(open_grid_5):
    trajs = collect_trajectories(open_grid_5, random_policy(open_grid_5), 10,
                                 seed=0)
    mad = compute_mad(open_grid_5)
    for t in trajs:
        for p in extract_pairs(t):
            assert mad.mad(p.s, p.s_prime) <= p.d_td


def test_buffer_uniform_when_priorities_equal(rng):
    buf = filled_buffer(10)
    buf.update_priorities(np.arange(10), np.zeros(10))
    draws = 100000
    counts = np.bincount(buf.sample_batch(draws, rng).indices, minlength=10)
    sigma = np.sqrt(draws * 0.1 * 0.9)
    assert np.all(np.abs(counts - draws / 10) < 5 * sigma)


def test_buffer_closed_form_ratio(rng):
    buf = filled_buffer(2, alpha=1.0, epsilon=0.1)
    buf.update_priorities([0, 1], [0.9, 0.0])
    p = buf.probabilities()
    assert np.isclose(p[0], 1.0 / 1.1)
    draws = 100000
    freq = np.mean(buf.sample_batch(draws, rng).indices == 0)
    sigma = np.sqrt(p[0] * (1 - p[0]) / draws)
    assert abs(freq - p[0]) < 5 * sigma


def test_buffer_follows_priority_law():
    buf = filled_buffer(4, alpha=0.6, epsilon=0.1)
    priorities = np.array([0.0, 1.0, 2.0, 4.0])
    buf.update_priorities(np.arange(4), priorities)
    weights = (priorities + 0.1) ** 0.6
    assert np.allclose(buf.probabilities(), weights / weights.sum())


def test_buffer_batch_with_replacement(rng):
    buf = filled_buffer(10)
    batch = buf.sample_batch(512, rng)
    assert len(batch.indices) == 512
    assert np.all((batch.indices >= 0) & (batch.indices < 10))
    assert np.array_equal(batch.s, buf.s[batch.indices])


def test_buffer_equal_priorities_reset_to_uniform():
    buf = filled_buffer(5)
    buf.update_priorities(np.arange(5), [3.0, 0.0, 1.0, 7.0, 2.0])
    buf.update_priorities(np.arange(5), np.full(5, 2.5))
    assert np.allclose(buf.probabilities(), 0.2)


def test_buffer_high_priority_dominates(rng):
    buf = filled_buffer(10)
    buf.update_priorities(np.arange(10), [1000.0] + [0.0] * 9)
    batch = buf.sample_batch(512, rng)
    assert np.mean(batch.indices == 0) > 0.9


def test_buffer_new_items_get_max_priority():
    buf = filled_buffer(2)
    buf.update_priorities([0, 1], [5.0, 1.0])
    buf.add_samples([PairSample(np.zeros(1), np.ones(1), 1)])
    assert len(buf) == 3
    assert buf.priorities[-1] == 5.0


def test_buffer_rejects_bad_priorities():
    buf = filled_buffer(3)
    with pytest.raises(ValueError):
        buf.update_priorities([0], [-1.0])
    with pytest.raises(ValueError):
        buf.update_priorities([0], [np.nan])
    with pytest.raises(IndexError):
        buf.update_priorities([3], [1.0])


def test_buffer_rejects_zero_gap():
    with pytest.raises(ValueError):
        PrioritizedBuffer().add(np.zeros((1, 1)), np.zeros((1, 1)), [0])


def test_empty_buffer(rng):
    with pytest.raises(EmptyBufferError):
        PrioritizedBuffer().sample_batch(4, rng)


def test_buffer_from_trajectories():
    buf = PrioritizedBuffer.from_trajectories([line_trajectory(50)])
    assert len(buf) == 1275
    assert np.all(buf.priorities == 1.0)


def test_dataset_empty(tmp_path):
    path = str(tmp_path / 'empty.jsonl')
    save_dataset([], path)
    assert open(path).read() == ''
    assert load_dataset(path) == []


def test_dataset_roundtrip(tmp_path, open_grid_5):
    trajs = collect_trajectories(open_grid_5, random_policy(open_grid_5), 100,
                                 seed=5)
    path = str(tmp_path / 'data.jsonl')
    save_dataset(trajs, path)
    assert sum(1 for _ in open(path)) == 100
    assert load_dataset(path) == trajs


def test_dataset_truncated(tmp_path, open_grid_5):
    trajs = collect_trajectories(open_grid_5, random_policy(open_grid_5), 3,
                                 seed=5)
    path = str(tmp_path / 'data.jsonl')
    save_dataset(trajs, path)
    text = open(path).read()
    with open(path, 'w') as out:
        out.write(text[:-20])
    with pytest.raises(DatasetParseError) as e:
        load_dataset(path)
    assert e.value.line_number == 3
    assert path in str(e.value)


def test_collect_is_seeded(open_grid_5):
    policy = random_policy(open_grid_5)
    a = collect_trajectories(open_grid_5, policy, 5, seed=11)
    b = collect_trajectories(open_grid_5, policy, 5, seed=11)
    c = collect_trajectories(open_grid_5, policy, 5, seed=12)
    assert a == b
    assert a != c


def test_collect_lengths(open_grid_5):
    trajs = collect_trajectories(open_grid_5, random_policy(open_grid_5), 4,
                                 seed=0)
    assert all(len(t) == open_grid_5.max_episode_steps for t in trajs)


def test_collect_stops_at_goal():
    spec = EnvSpec('open_grid', width=3, height=3, goal=(2, 2),
                   max_episode_steps=500)
    trajs = collect_trajectories(spec, random_policy(spec), 5, seed=0)
    for t in trajs:
        assert envs.state_key(spec, t.states[-1]) == (2, 2)


def test_random_walk_coverage(open_grid_5):
    trajs = collect_trajectories(open_grid_5, random_policy(open_grid_5), 200,
                                 seed=0)
    assert coverage(open_grid_5, trajs) >= 0.99


def test_greedy_collection_policy(open_grid_5, rng):
    keys = envs.enumerate_keys(open_grid_5)
    values = np.zeros((len(keys), 4))
    values[:, 3] = 1.0
    policy = epsilon_greedy_policy(open_grid_5, QTable(keys, 4, values),
                                   epsilon=0.0)
    assert policy(envs.features(open_grid_5, (1, 1)), rng) == 3


def test_dataset_mixed_state_dims(tmp_path):
    path = str(tmp_path / 'data.jsonl')
    with open(path, 'w') as out:
        out.write('{"states": [[0.0, 0.0], [0.25, 0.0]], "actions": [3]}\n')
        out.write('{"states": [[0.0, 0.0, 0.0]], "actions": []}\n')
    with pytest.raises(DatasetParseError) as e:
        load_dataset(path)
    assert e.value.line_number == 2
    assert 'dimension' in str(e.value)


def test_collect_on_slipping_grid_is_seeded():
    spec = EnvSpec('open_grid', width=5, height=5, slip_prob=0.3)
    policy = random_policy(spec)
    a = collect_trajectories(spec, policy, 5, seed=11)
    assert a == collect_trajectories(spec, policy, 5, seed=11)
    slipped = [
        envs.transition_key(spec, envs.state_key(spec, s), action) !=
        envs.state_key(spec, s_next)
        for t in a
        for s, action, s_next in zip(t.states[:-1], t.actions, t.states[1:])
    ]
    assert any(slipped)
