import numpy as np
import pytest
from numpy import isclose

from vcmoe.base.errors import TooFewReplicates, UnknownCoefficient, UsageError
from vcmoe.base.kernel import get_kernel
from vcmoe.base.model import ModelSpec
from vcmoe.base.utilities import BOOTSTRAP_SUP_STREAM, BOOTSTRAP_VARIANCE_STREAM
from vcmoe.estimation.em import FitConfig
from vcmoe.inference import constancy
from vcmoe.inference.bands import gumbel_critical
from vcmoe.scenarios import make

R_K = get_kernel().constants().r_K


@pytest.fixture(scope='module')
def null_data():
    return make('Sim1', beta=(-0.4, 0.9)).generate(n=300, seed=2)


@pytest.fixture
def config():
    return FitConfig(bandwidth=0.3, n_grid=11, max_iter=30)


def test_glrt_degrees_of_freedom():
    spec = ModelSpec(2, 2, 2)
    assert isclose(constancy.glrt_dof(spec, ['beta_0', 'beta_1'], 0.1), 18 * R_K)
    assert isclose(constancy.glrt_dof(spec, ['beta_1'], 0.1), 9 * R_K)
    assert isclose(constancy.glrt_dof(spec, ['delta_1'], 0.1), 4.5 * R_K)


def test_glrt_degrees_of_freedom_softmax():
    spec = ModelSpec(3, 2, 2)
    # both gating functions of covariate 0 count as one gating covariate
    assert isclose(constancy.glrt_dof(spec, ['beta_1_0', 'beta_2_0'], 0.2), 3 * 0.45 / 0.2 * R_K)


def test_glrt_under_the_null(gaussian_spec, null_data, config):
    result = constancy.test_constancy_glrt(gaussian_spec, null_data, config, ['beta_0', 'beta_1'])
    assert result.statistic >= 0.0
    assert 0.0 <= result.p_value <= 1.0
    assert result.reference == constancy.CHI_SQUARE
    assert isclose(result.reference_value, constancy.glrt_dof(gaussian_spec, ['beta_0', 'beta_1'], 0.3))
    assert isclose(result.details['scaled_statistic'], R_K * result.statistic)
    assert set(result.details['null_constants']) == {'beta_0', 'beta_1'}


def test_glrt_argument_checks(gaussian_spec, null_data, config):
    with pytest.raises(UsageError):
        constancy.test_constancy_glrt(gaussian_spec, null_data, config, [])
    with pytest.raises(UnknownCoefficient):
        constancy.test_constancy_glrt(gaussian_spec, null_data, config, ['beta_9'])


def test_asymptotic_sup_test(gaussian_spec, null_data, config):
    result = constancy.test_constancy_asymptotic(gaussian_spec, null_data, config, 'beta_0')
    assert result.statistic >= 0.0
    assert isclose(result.reference_value, gumbel_critical(0.3, 0.95))
    assert result.reject == (result.statistic > result.reference_value)
    assert np.isfinite(result.details['constant'])


def test_bootstrap_test_needs_replicates(gaussian_spec, null_data, config):
    with pytest.raises(TooFewReplicates):
        constancy.test_constancy_bootstrap(gaussian_spec, null_data, config, 'beta_0', M1=10, M2=200)


def test_result_serializes(gaussian_spec):
    result = constancy.TestResult(['beta_0'], 1.5, constancy.GUMBEL, 3.2, None, False, 0.95, 'asymptotic')
    d = result.as_dict()
    assert d['coefficients'] == ['beta_0']
    assert d['reject'] is False


@pytest.mark.slow
def test_bootstrap_sup_test(gaussian_spec, null_data):
    config = FitConfig(bandwidth=0.3, n_grid=9, max_iter=15)
    result = constancy.test_constancy_bootstrap(gaussian_spec, null_data, config, 'beta_0', M1=50, M2=50, seed=3)
    assert 0.0 <= result.p_value <= 1.0
    assert result.reject == (result.statistic > result.reference_value)


def _fixed_replicates(G):
    def run(work, count, seed, stream, threads=1, what='bootstrap', return_failures=False):
        rng = np.random.default_rng(stream)
        kept = [(rng.normal(size=G), rng.normal()) for _ in range(count - 1)]
        return kept, 1
    return run


def test_bootstrap_p_value_is_the_exceedance_share(monkeypatch, gaussian_spec, null_data, config):
    G = len(config.grid_points)
    run = _fixed_replicates(G)
    monkeypatch.setattr(constancy, 'run_replicates', run)
    result = constancy.test_constancy_bootstrap(gaussian_spec, null_data, config, 'beta_0', M1=50, M2=60, seed=3)
    first, _ = run(None, 50, 3, BOOTSTRAP_VARIANCE_STREAM)
    second, _ = run(None, 60, 3, BOOTSTRAP_SUP_STREAM)
    sd = np.std(np.array([c for c, _ in first]), axis=0, ddof=1)
    sups = np.array([np.max(np.abs(c - b) / sd) for c, b in second])
    assert result.p_value == np.mean(sups >= result.statistic)
    assert isclose(result.reference_value, np.quantile(sups, 0.95))
    assert result.skipped == 2
    assert result.as_dict()['skipped'] == 2


def test_exceedance_p_value():
    assert constancy.exceedance_p_value([1.0, 2.0, 3.0, 4.0], 2.0) == 0.75
    assert constancy.exceedance_p_value([1.0, 2.0], 5.0) == 0.0
