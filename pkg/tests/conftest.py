import numpy as np
import pytest

from vcmoe.base.model import ModelSpec
from vcmoe.estimation.data import Dataset
from vcmoe.estimation.em import FitConfig
from vcmoe.scenarios import make


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help="run the Monte-Carlo acceptance tests")


def pytest_configure(config):
    config.addinivalue_line('markers', "slow: Monte-Carlo checks, skipped unless --runslow is given")


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope='session')
def sim1():
    return make('Sim1')


@pytest.fixture(scope='session')
def sim1_data(sim1):
    return sim1.generate(n=300, seed=11)


@pytest.fixture(scope='session')
def gaussian_spec():
    return ModelSpec(2, 2, 2)


@pytest.fixture
def fast_config():
    return FitConfig(bandwidth=0.3, n_grid=11, max_iter=30, tol=1e-6)


@pytest.fixture(scope='session')
def separated_data():
    """Two Gaussian experts 20 standard deviations apart with a flat gate."""
    rng = np.random.default_rng(5)
    n = 200
    u = rng.uniform(0, 1, n)
    labels = rng.integers(0, 2, n)
    X = np.column_stack([np.ones(n), rng.standard_normal(n)])
    Z = np.column_stack([np.ones(n), rng.standard_normal(n)])
    y = np.where(labels == 0, -10.0, 10.0) + 0.5 * Z[:, 1] + rng.standard_normal(n)
    return Dataset(u, X, Z, y, labels + 1)


@pytest.fixture(scope='session')
def intercept_data():
    """Intercept-only covariates and a bimodal response."""
    rng = np.random.default_rng(17)
    n = 30
    u = np.sort(rng.uniform(0, 1, n))
    labels = rng.integers(0, 2, n)
    y = np.where(labels == 0, -3.0, 3.0) + 0.5 * rng.standard_normal(n)
    return Dataset(u, np.ones((n, 1)), np.ones((n, 1)), y, labels + 1)
