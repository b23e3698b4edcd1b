import numpy as np
import pytest

from envs import EnvSpec, features, enumerate_keys
from embed import EmbedConfig, EmbeddingModel
from oracle_eval import MadTable, compute_mad, evaluate_embedding
from oracle_eval import evaluate_planner, EvalReport, write_report
from oracle_eval import read_report, save_episode_reports
from oracle_eval import load_episode_reports, sign_test, UNREACHABLE
from latent import EpisodeResult
from trajdata import Trajectory


def test_open_grid_mad_is_manhattan(open_grid_5):
    mad = compute_mad(open_grid_5)
    assert mad.mad(features(open_grid_5, (0, 0)),
                   features(open_grid_5, (3, 4))) == 7
    d = mad.as_float()
    assert np.all(np.diag(d) == 0)
    assert np.array_equal(d, d.T)


def test_walls_grid_detour():
    spec = EnvSpec('walls_grid', width=5, height=5,
                   walls=[(2, 0), (2, 1), (2, 2), (2, 3)])
    mad = compute_mad(spec)
    assert mad.mad(features(spec, (0, 0)), features(spec, (4, 0))) == 12


def test_enclosed_cell_is_unreachable():
    spec = EnvSpec('walls_grid', width=3, height=3,
                   walls=[(1, 0), (0, 1)])
    mad = compute_mad(spec)
    assert mad.mad(features(spec, (0, 0)), features(spec, (2, 2))) is None
    assert (mad.directed == UNREACHABLE).sum() == 2 * (len(mad) - 1)


def test_keydoor_path_goes_through_key(keydoor_6):
    mad = compute_mad(keydoor_6)
    start = features(keydoor_6, (0, 0, 0))
    # start -> key (0, 5), key -> door (3, 3), door -> goal (5, 0)
    assert mad.mad(start, features(keydoor_6, (5, 0, 1))) == 5 + 5 + 5
    assert mad.mad(start, features(keydoor_6, (0, 5, 1))) == 5
    assert mad.mad(features(keydoor_6, (5, 0, 1)), start) is None


def test_keydoor_mad_is_directed(keydoor_6):
    d = compute_mad(keydoor_6).as_float()
    assert not np.array_equal(d, d.T)


@pytest.mark.parametrize('spec', [
    EnvSpec('open_grid', width=4, height=3),
    EnvSpec('walls_grid', width=5, height=5, walls=[(2, 1), (2, 2), (2, 3)]),
    EnvSpec('walls_grid', width=3, height=3, walls=[(1, 0), (0, 1)]),
])
def test_audits(spec):
    mad = compute_mad(spec)
    assert mad.audit_triangle()
    assert mad.audit_one_step()


def test_keydoor_audits(keydoor_6):
    mad = compute_mad(keydoor_6)
    assert mad.audit_triangle()
    assert mad.audit_one_step()


def test_audits_catch_corruption(open_grid_5):
    mad = compute_mad(open_grid_5)
    mad.directed[0, -1] += 3
    assert not mad.audit_one_step()
    assert not mad.audit_triangle()


def test_continuous_env_is_unsupported(mountain):
    with pytest.raises(NotImplementedError):
        compute_mad(mountain)


def test_slipping_grid_has_no_mad():
    spec = EnvSpec('open_grid', width=3, height=3, slip_prob=0.1)
    with pytest.raises(NotImplementedError):
        compute_mad(spec)


def test_perfect_embedding(open_grid_5, cell_embedding):
    report = evaluate_embedding(cell_embedding, compute_mad(open_grid_5))
    assert np.isclose(report.mae, 0.0)
    assert np.isclose(report.spearman, 1.0)
    assert report.num_pairs == 25 * 24 // 2
    assert report.num_unreachable == 0


def test_constant_embedding(open_grid_5, make_embedding):
    mad = compute_mad(open_grid_5)
    report = evaluate_embedding(make_embedding(np.zeros((2, 3))), mad)
    i, j = np.triu_indices(len(mad), k=1)
    assert np.isclose(report.mae, mad.symmetric()[i, j].mean())


def test_evaluation_ignores_enumeration_order(open_grid_5, rng):
    embedding = EmbeddingModel.create(
        2, EmbedConfig(embed_dim=3, hidden=(8,)), rng)
    mad = compute_mad(open_grid_5)
    order = rng.permutation(len(mad))
    shuffled = MadTable(open_grid_5, [mad.keys[k] for k in order],
                        mad.directed[np.ix_(order, order)])
    a = evaluate_embedding(embedding, mad)
    b = evaluate_embedding(embedding, shuffled)
    assert np.isclose(a.mae, b.mae)
    assert np.isclose(a.spearman, b.spearman)


def test_sampled_pairs(open_grid_5, cell_embedding, rng):
    report = evaluate_embedding(cell_embedding, compute_mad(open_grid_5),
                                pairs=500, rng=rng)
    assert np.isclose(report.mae, 0.0)
    assert report.num_pairs <= 500


def test_violation_rate_from_training_pairs(open_grid_5, cell_embedding):
    s = np.array([features(open_grid_5, (0, 0))] * 2)
    s_prime = np.array([features(open_grid_5, (2, 2))] * 2)
    report = evaluate_embedding(cell_embedding, compute_mad(open_grid_5),
                                training_pairs=(s, s_prime, np.array([4, 3])))
    assert np.isclose(report.violation_rate, 0.5)


def episode(spec, start, goal, steps, success):
    cells = [start] * (steps + 1)
    states = np.array([features(spec, c) for c in cells])
    states[-1] = features(spec, goal) if success else states[-1]
    return EpisodeResult(
        trajectory=Trajectory(states, np.zeros(steps, dtype=int)),
        success=success, final_distance=0.0, start=states[0],
        goal=features(spec, goal))


def test_optimal_planner_ratio(open_grid_5):
    mad = compute_mad(open_grid_5)
    episodes = [
        episode(open_grid_5, (0, 0), (3, 4), 7, True),
        episode(open_grid_5, (1, 1), (1, 3), 2, True),
    ]
    report = evaluate_planner(episodes, mad)
    assert report.success_rate == 1.0
    assert report.mean_path_ratio == 1.0
    assert report.num_episodes == 2


def test_planner_without_successes(open_grid_5):
    episodes = [episode(open_grid_5, (0, 0), (3, 4), 50, False)]
    report = evaluate_planner(episodes, compute_mad(open_grid_5))
    assert report.success_rate == 0.0
    assert report.mean_path_ratio is None


def test_planner_ratio_ignores_start_at_goal(open_grid_5):
    episodes = [
        episode(open_grid_5, (2, 2), (2, 2), 0, True),
        episode(open_grid_5, (0, 0), (0, 2), 3, True),
    ]
    report = evaluate_planner(episodes, compute_mad(open_grid_5))
    assert report.mean_path_ratio == 1.5


def test_planner_needs_episodes():
    with pytest.raises(ValueError):
        evaluate_planner([])


def test_episode_reports_roundtrip(tmp_path, open_grid_5):
    episodes = [episode(open_grid_5, (0, 0), (3, 4), 9, True)]
    path = str(tmp_path / 'plan.jsonl')
    save_episode_reports(path, episodes)
    records = load_episode_reports(path)
    assert records[0]['steps'] == 9 and records[0]['success']
    mad = compute_mad(open_grid_5)
    assert evaluate_planner(records, mad) == evaluate_planner(episodes, mad)


def test_report_file(tmp_path):
    report = EvalReport(mae=0.25, spearman=0.97, num_pairs=4950)
    path = str(tmp_path / 'report.txt')
    write_report(path, report)
    lines = open(path).read().splitlines()
    assert 'mae 0.25' in lines
    assert 'success_rate undefined' in lines
    assert read_report(path) == report


def test_report_update():
    report = EvalReport(mae=1.0, success_rate=0.5)
    report.update(EvalReport(success_rate=0.9, num_episodes=10))
    assert report == EvalReport(mae=1.0, success_rate=0.9, num_episodes=10)


def test_sign_test():
    assert sign_test([1] * 10, [0] * 10) < 0.05
    assert sign_test([1, 0, 1], [1, 0, 1]) == 1.0
    assert sign_test([0] * 10, [1] * 10) > 0.5


def test_enumerated_keys_match(open_grid_5):
    assert compute_mad(open_grid_5).keys == enumerate_keys(open_grid_5)
