import numpy as np
import pytest

from envs import EnvSpec, make_keydoor_spec
from embed import EmbedConfig, EmbeddingModel
from neural import Mlp


def pytest_addoption(parser):
    parser.addoption(
        '--runslow', action='store_true', default=False,
        help='run slow acceptance tests'
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='need --runslow to run')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def open_grid_5():
    return EnvSpec('open_grid', width=5, height=5)


@pytest.fixture
def open_grid_3():
    return EnvSpec('open_grid', width=3, height=3)


@pytest.fixture
def keydoor_6():
    return make_keydoor_spec(6, 6)


@pytest.fixture
def mountain():
    return EnvSpec('mountain_hill')


def linear_embedding(weights, bias=None, norm='l1'):
    """Embedding with a single linear layer z = s W + b."""
    weights = np.atleast_2d(np.asarray(weights, dtype=float))
    if bias is None:
        bias = np.zeros(weights.shape[1])
    config = EmbedConfig(embed_dim=weights.shape[1], norm=norm, hidden=())
    net = Mlp([weights.shape[0], weights.shape[1]])
    net.set_params([weights, np.asarray(bias, dtype=float)])
    return EmbeddingModel(net, config)


@pytest.fixture
def cell_embedding():
    """Maps normalized 5x5 grid features back to cell coordinates, so its
    L1 distance is the open-grid Manhattan distance."""
    return linear_embedding(np.diag([4.0, 4.0]))


@pytest.fixture
def make_embedding():
    return linear_embedding
