import numpy as np
import pytest

import envs
from common import ConfigError
from envs import EnvSpec, Env, make_keydoor_spec, load_env_spec
from envs import features, state_key, reset, step, enumerate_keys

UP, DOWN, LEFT, RIGHT = range(4)


def test_open_grid_reset_is_a_free_cell(open_grid_5):
    for seed in range(20):
        x, y = state_key(open_grid_5, reset(open_grid_5, seed))
        assert 0 <= x < 5 and 0 <= y < 5


def test_keydoor_reset_has_no_key(keydoor_6):
    s = reset(keydoor_6, 7)
    assert s[2] == 0
    assert state_key(keydoor_6, s) == (0, 0, 0)


def test_mountain_reset_range(mountain):
    for seed in range(20):
        s = reset(mountain, seed)
        assert -0.6 <= s[0] <= -0.4
        assert s[1] == 0


def test_reset_is_seeded(open_grid_5):
    assert np.array_equal(reset(open_grid_5, 3), reset(open_grid_5, 3))


def test_step_moves_one_cell(open_grid_5):
    s_next, reward, done = step(open_grid_5, features(open_grid_5, (2, 2)),
                                RIGHT)
    assert state_key(open_grid_5, s_next) == (3, 2)
    assert reward == -1.0
    assert not done


def test_step_blocked_by_wall():
    spec = EnvSpec('walls_grid', width=5, height=5, walls=[(3, 2)])
    s_next, _, _ = step(spec, features(spec, (2, 2)), RIGHT)
    assert state_key(spec, s_next) == (2, 2)


def test_step_blocked_by_bounds(open_grid_5):
    s_next, _, _ = step(open_grid_5, features(open_grid_5, (0, 0)), UP)
    assert state_key(open_grid_5, s_next) == (0, 0)


def test_step_rejects_unknown_action(open_grid_5):
    with pytest.raises(ValueError):
        step(open_grid_5, features(open_grid_5, (0, 0)), 4)


def test_step_reports_goal():
    spec = EnvSpec('open_grid', width=5, height=5, goal=(3, 2))
    _, _, done = step(spec, features(spec, (2, 2)), RIGHT)
    assert done


def test_keydoor_picks_up_key(keydoor_6):
    s = features(keydoor_6, (0, 4, 0))
    s_next, _, _ = step(keydoor_6, s, DOWN)
    assert state_key(keydoor_6, s_next) == (0, 5, 1)


def test_keydoor_door_needs_key(keydoor_6):
    assert keydoor_6.door == (3, 3)
    locked, _, _ = step(keydoor_6, features(keydoor_6, (2, 3, 0)), RIGHT)
    assert state_key(keydoor_6, locked) == (2, 3, 0)
    opened, _, _ = step(keydoor_6, features(keydoor_6, (2, 3, 1)), RIGHT)
    assert state_key(keydoor_6, opened) == (3, 3, 1)


def test_keydoor_key_is_never_lost(rng):
    env = Env(make_keydoor_spec(6, 6, max_episode_steps=2000))
    s = env.reset()
    has_key = s[2]
    while not env.done:
        s, _, _ = env.step(int(rng.integers(4)))
        assert s[2] >= has_key
        has_key = s[2]


def test_mountain_state_stays_in_bounds(mountain, rng):
    s = reset(mountain, 0)
    for _ in range(500):
        s, reward, _ = step(mountain, s, int(rng.integers(3)))
        assert envs.MIN_POSITION <= s[0] <= envs.MAX_POSITION
        assert abs(s[1]) <= envs.MAX_SPEED
        assert reward == -1.0


def test_mountain_pushing_right_from_rest_moves_right(mountain):
    s_next, _, _ = step(mountain, np.array([-0.5, 0.0]), 2)
    assert s_next[1] > 0


def test_enumerate_open_grid(open_grid_5):
    assert len(enumerate_keys(open_grid_5)) == 25


def test_enumerate_walls_grid():
    walls = [(2, 0), (2, 1), (2, 3), (2, 4), (4, 2)]
    spec = EnvSpec('walls_grid', width=5, height=5, walls=walls)
    keys = enumerate_keys(spec)
    assert len(keys) == 20
    assert not set(keys) & set(walls)


def test_enumerate_keydoor_only_reachable():
    spec = make_keydoor_spec(4, 4)
    keys = set(enumerate_keys(spec))
    assert len(keys) <= 2 * 16
    # without the key the agent is confined to the left of the wall, and
    # entering the key cell always picks it up
    no_key = { k[:2] for k in keys if k[2] == 0 }
    assert no_key == { (x, y) for x in range(2) for y in range(4) } - {(0, 3)}
    assert (0, 3, 0) not in keys
    assert (3, 0, 1) in keys


def test_enumerate_continuous_is_unsupported(mountain):
    with pytest.raises(NotImplementedError):
        enumerate_keys(mountain)


def test_walls_cover_all_cells():
    walls = [(0, 0), (0, 1), (1, 0), (1, 1)]
    with pytest.raises(ConfigError):
        EnvSpec('walls_grid', width=2, height=2, walls=walls)


def test_invalid_specs():
    with pytest.raises(ConfigError):
        EnvSpec('open_grid', width=1, height=5)
    with pytest.raises(ConfigError):
        EnvSpec('lava_grid', width=5, height=5)
    with pytest.raises(ConfigError):
        EnvSpec('walls_grid', width=5, height=5, walls=[(1, 1)],
                start=(1, 1))
    with pytest.raises(ConfigError):
        EnvSpec('open_grid', width=5, height=5, max_episode_steps=0)


def test_load_env_spec(tmp_path):
    path = tmp_path / 'walls.toml'
    path.write_text('env = "walls_grid"\nwidth = 5\nheight = 5\n'
                    'walls = [[3, 2]]\nmax_steps = 20\n')
    spec = load_env_spec(str(path))
    assert spec.walls == frozenset({(3, 2)})
    assert spec.max_episode_steps == 20


def test_load_env_spec_rejects_unknown_keys(tmp_path):
    path = tmp_path / 'bad.toml'
    path.write_text('env = "open_grid"\nwidth = 5\nheight = 5\nlava = 1\n')
    with pytest.raises(ConfigError):
        load_env_spec(str(path))


def test_load_keydoor_defaults(tmp_path):
    path = tmp_path / 'keydoor.toml'
    path.write_text('env = "keydoor_grid"\n')
    spec = load_env_spec(str(path))
    assert spec == make_keydoor_spec()


def test_env_step_budget():
    spec = EnvSpec('open_grid', width=5, height=5, max_episode_steps=3)
    env = Env(spec)
    env.reset(start=features(spec, (0, 0)))
    dones = [env.step(UP)[2] for _ in range(3)]
    assert dones == [False, False, True]
    assert not env.reached_goal


def test_env_reset_at_goal_is_done(open_grid_5):
    goal = features(open_grid_5, (1, 1))
    env = Env(open_grid_5, goal)
    env.reset(start=goal)
    assert env.done and env.reached_goal


def test_state_key_roundtrip(keydoor_6):
    for key in enumerate_keys(keydoor_6):
        assert state_key(keydoor_6, envs.state_from_key(keydoor_6, key)) == key


def slipping_grid(slip_prob=0.5):
    return EnvSpec('open_grid', width=5, height=5, slip_prob=slip_prob)


def test_slipping_step_needs_rng():
    spec = slipping_grid()
    with pytest.raises(ValueError):
        step(spec, features(spec, (2, 2)), RIGHT)


def test_seeded_slips_are_reproducible():
    spec = slipping_grid()

    def walk(seed):
        rng = np.random.default_rng(seed)
        s, keys = features(spec, (2, 2)), []
        for _ in range(100):
            s, _, _ = step(spec, s, RIGHT, rng=rng)
            keys.append(state_key(spec, s))
        return keys

    assert walk(3) == walk(3)
    assert walk(3) != walk(4)


def test_slips_replace_the_chosen_action():
    spec = slipping_grid(0.5)
    rng = np.random.default_rng(0)
    moved = [
        state_key(spec, step(spec, features(spec, (2, 2)), RIGHT, rng=rng)[0])
        for _ in range(400)
    ]
    # a slip picks any of the four moves, RIGHT included
    right = moved.count((3, 2)) / len(moved)
    assert 0.55 < right < 0.75
    assert { (2, 1), (2, 3), (1, 2) } <= set(moved)


def test_env_seeds_slips_on_reset():
    spec = slipping_grid()

    def episode():
        env = Env(spec)
        env.reset(seed=9, start=features(spec, (0, 0)))
        return [state_key(spec, env.step(RIGHT)[0]) for _ in range(20)]

    assert episode() == episode()


def test_zero_slip_ignores_rng(open_grid_5):
    rng = np.random.default_rng(0)
    s_next, _, _ = step(open_grid_5, features(open_grid_5, (2, 2)), RIGHT,
                        rng=rng)
    assert state_key(open_grid_5, s_next) == (3, 2)
    assert open_grid_5.deterministic


def test_invalid_slip_prob():
    with pytest.raises(ConfigError):
        slipping_grid(1.0)
    with pytest.raises(ConfigError):
        slipping_grid(-0.1)
    with pytest.raises(ConfigError):
        EnvSpec('mountain_hill', slip_prob=0.1)


def test_load_slipping_keydoor(tmp_path):
    path = tmp_path / 'keydoor.toml'
    path.write_text('env = "keydoor_grid"\nslip_prob = 0.2\n')
    spec = load_env_spec(str(path))
    assert spec == make_keydoor_spec(slip_prob=0.2)
    assert not spec.deterministic
