"""
Monte-Carlo checks against the reference simulation results. Run with --runslow.
"""
import itertools
import os

import numpy as np
import pytest
from scipy import stats

from vcmoe.base.utilities import STUDY_STREAM
from vcmoe.estimation.bandwidth import select_bandwidth
from vcmoe.estimation.em import FitConfig, fit_constant
from vcmoe.inference import constancy
from vcmoe.inference.bootstrap import run_replicates
from vcmoe.scenarios import make
from vcmoe.scenarios.study import StudyConfig, align, relabel_values, run_study

THREADS = os.cpu_count() or 1

pytestmark = pytest.mark.slow


def test_sim1_rase():
    result = run_study('Sim1', StudyConfig(bandwidths=(0.21,), replicates=50, n=500, seed=1, n_grid=50,
                                           threads=THREADS))
    table = result.rase
    assert 0.09 <= table.entry('delta_1', 0.21)[0] <= 0.21
    assert 0.31 <= table.entry('alpha_1_0', 0.21)[0] <= 0.55
    assert 0.50 <= table.entry('beta_0', 0.21)[0] <= 1.00


def test_sim2_rase():
    result = run_study('Sim2', StudyConfig(bandwidths=(0.22,), replicates=50, n=500, seed=2, n_grid=50,
                                           threads=THREADS))
    table = result.rase
    assert 0.012 <= table.entry('alpha_1_0', 0.22)[0] <= 0.045
    assert 0.18 <= table.entry('beta_0', 0.22)[0] <= 0.40


def _coverage(result, coefficient, level, method):
    frame = result.coverage
    row = frame[(frame.coefficient == coefficient) & np.isclose(frame.level, level) & (frame.method == method)]
    return float(row['coverage'].iloc[0])


def test_band_coverage():
    config = StudyConfig(bandwidths=(0.18,), replicates=100, n=500, seed=3, n_grid=50, bands=('asymptotic', 'bootstrap'),
                         levels=(0.90, 0.95), band_bandwidth=0.18, M1=200, M2=200, threads=THREADS)
    result = run_study('Sim1', config)
    for name in ('delta_1', 'alpha_1_0'):
        assert 0.88 <= _coverage(result, name, 0.95, 'bootstrap') <= 0.99, f"bootstrap coverage of {name}"
    assert _coverage(result, 'alpha_1_0', 0.90, 'asymptotic') < _coverage(result, 'alpha_1_0', 0.90, 'bootstrap')


def test_asymptotic_coverage_improves_with_n():
    coverage = {}
    for n in (500, 1000):
        config = StudyConfig(bandwidths=(0.18,), replicates=50, n=n, seed=4, n_grid=50, bands=('asymptotic',),
                             levels=(0.90,), band_bandwidth=0.18, threads=THREADS)
        coverage[n] = _coverage(run_study('Sim1', config), 'alpha_1_0', 0.90, 'asymptotic')
    assert coverage[1000] >= coverage[500] - 0.04


def test_wilks_phenomenon():
    samples = []
    for beta in [(-1.0, 1.0), (-0.5, 1.0), (-1.0, 0.5)]:
        config = StudyConfig(bandwidths=(0.21,), replicates=100, n=500, seed=5, n_grid=50, glrt=True, threads=THREADS)
        result = run_study(make('Sim1', beta=beta), config)
        samples.append(result.glrt_null)
        assert abs(np.mean(result.glrt_null) - result.glrt_dof) <= 0.35 * result.glrt_dof
    for first, second in itertools.combinations(samples, 2):
        assert stats.ks_2samp(first, second).statistic < 0.25


def test_constant_coefficient_rate():
    scenario = make('Sim1', beta=(-1.0, 1.0))
    spec = scenario.model_spec().with_constant({'beta_0', 'beta_1'})
    k = spec.index('beta_1')

    def spread(n):
        config = FitConfig(bandwidth=0.21, n_grid=50)

        def work(rng):
            data = scenario.sample(n, rng)
            _, curve = fit_constant(spec, data, config, 'beta_1')
            perm = align(spec, curve.values, scenario.truth_table(curve.grid, natural=False))
            return relabel_values(spec, curve.values[:1], perm)[0, k]

        return np.std(run_replicates(work, 50, seed=n, stream=STUDY_STREAM, threads=THREADS), ddof=1)

    ratio = spread(500) / spread(2000)
    assert 1.6 <= ratio <= 2.6, f"SD ratio {ratio}"


def test_cv_bandwidth():
    scenario = make('Sim1')
    data = scenario.generate(n=500, seed=1)
    candidates = np.round(np.arange(0.12, 0.301, 0.03), 2)
    report = select_bandwidth(scenario.model_spec(), data, candidates, FitConfig(bandwidth=0.2, n_grid=30,
                                                                                  threads=THREADS))
    assert 0.15 <= report.best_h <= 0.27


def _null_rejection_rate(test, replicates, seed):
    scenario = make('Sim1', beta=(-1.0, 1.0))
    spec = scenario.model_spec()

    def work(rng):
        return float(test(spec, scenario.sample(500, rng)).reject)

    return np.mean(run_replicates(work, replicates, seed=seed, stream=STUDY_STREAM, threads=THREADS))


def test_asymptotic_sup_test_size():
    config = FitConfig(bandwidth=0.21, n_grid=50)
    rate = _null_rejection_rate(
        lambda spec, data: constancy.test_constancy_asymptotic(spec, data, config, 'beta_0', level=0.95), 100, 7)
    assert rate <= 0.15, f"rejection rate {rate} under a constant gate"


def test_bootstrap_sup_test_size():
    config = FitConfig(bandwidth=0.21, n_grid=30)
    rate = _null_rejection_rate(
        lambda spec, data: constancy.test_constancy_bootstrap(spec, data, config, 'beta_0', M1=50, M2=50,
                                                              level=0.95), 40, 8)
    assert rate <= 0.20, f"rejection rate {rate} under a constant gate"
