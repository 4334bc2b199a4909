import numpy as np
import pytest
from numpy import isclose

from vcmoe.base.errors import (BandwidthGeqOne, DimensionMismatch, PilotTooSmall, ReplicateFailure, SingularHessian,
                               TooFewReplicates, UsageError)
from vcmoe.base.kernel import get_kernel
from vcmoe.base.model import ModelSpec, Responsibilities
from vcmoe.base.utilities import upper_quantile
from vcmoe.estimation.data import Dataset
from vcmoe.estimation.em import FitConfig, ThetaCurve, fit_vcmoe
from vcmoe.inference.bands import (asymptotic_band, asymptotic_bands, bootstrap_band, bootstrap_bands,
                                   centering_constant, gumbel_critical)
from vcmoe.inference.bootstrap import run_replicates
from vcmoe.inference import bands as bands_module
from vcmoe.inference.covariance import UNDERSMOOTH, covariance_curve, estimate_bias, sandwich, sandwich_cov


def _curve(spec, grid, values, slopes=None, h=0.2, constants=None, n=2):
    values = np.asarray(values, dtype=float)
    slopes = np.zeros_like(values) if slopes is None else np.asarray(slopes, dtype=float)
    gamma = Responsibilities(np.full((n, spec.n_components), 1.0 / spec.n_components))
    return ThetaCurve(spec, np.asarray(grid, dtype=float), values, slopes, gamma, h, constants=constants or {})


@pytest.fixture(scope='module')
def sim1_fit(sim1_data, gaussian_spec):
    return fit_vcmoe(gaussian_spec, sim1_data, FitConfig(bandwidth=0.3, n_grid=11, max_iter=30))


def test_sandwich_reduces_to_weighted_least_squares():
    rng = np.random.default_rng(4)
    n = 200
    u = rng.uniform(0, 1, n)
    Z = np.column_stack([np.ones(n), rng.standard_normal(n)])
    y = 1.0 + 2.0 * Z[:, 1] + (0.5 + u) * rng.standard_normal(n)
    data = Dataset(u, np.ones((n, 1)), Z, y)
    spec = ModelSpec(2, 1, 2)
    h, u0 = 0.3, 0.5
    t = u - u0
    w = get_kernel().scaled_weight(t, h)
    E = np.column_stack([Z, Z * t[:, None]])
    bread = np.linalg.inv((E * w[:, None]).T @ E)
    coef = bread @ ((E * w[:, None]).T @ y)
    r = y - E @ coef
    expected = bread @ ((E * (w * w * r * r)[:, None]).T @ E) @ bread

    row = np.zeros(spec.n_coefficients)
    slope = np.zeros(spec.n_coefficients)
    k1, k2 = spec.index('alpha_1_0'), spec.index('alpha_1_1')
    row[[k1, k2]] = coef[:2]
    slope[[k1, k2]] = coef[2:]
    curve = _curve(spec, [0.0, 0.5, 1.0], np.tile(row, (3, 1)), np.tile(slope, (3, 1)), h=h,
                   constants={'delta_1': 0.0, 'delta_2': 0.0})
    gamma = np.column_stack([np.ones(n), np.zeros(n)])
    result = sandwich(curve, data, u0, gamma=gamma)
    block = result.cov[np.ix_([k1, k2], [k1, k2])]
    assert np.allclose(block, expected[:2, :2], rtol=1e-6, atol=1e-12), f"{block} vs {expected[:2, :2]}"
    assert np.all(result.cov[spec.index('delta_1')] == 0.0), 'fixed coefficients carry no variance'


def test_covariances_are_symmetric_and_nonnegative(sim1_fit, sim1_data):
    cov_curve = covariance_curve(sim1_fit, sim1_data)
    assert np.allclose(cov_curve.cov, np.swapaxes(cov_curve.cov, 1, 2), atol=1e-10)
    variances = np.diagonal(cov_curve.cov, axis1=1, axis2=2)
    assert np.all(variances >= 0)
    assert np.all(variances[1:-1] > 0)
    assert np.all(cov_curve.bias == 0.0)


def test_pilot_must_exceed_bandwidth(gaussian_spec, sim1_data):
    curve = _curve(gaussian_spec, [0.0, 0.5, 1.0], np.zeros((3, 8)))
    with pytest.raises(PilotTooSmall):
        estimate_bias(gaussian_spec, sim1_data, curve, 0.5, pilot_h=0.1)


def test_undersmoothing_has_no_bias(gaussian_spec, sim1_data):
    curve = _curve(gaussian_spec, [0.0, 0.5, 1.0], np.ones((3, 8)))
    assert np.all(estimate_bias(gaussian_spec, sim1_data, curve, 0.5, 0.4, mode=UNDERSMOOTH) == 0.0)


def test_bias_of_cubic_curve_is_exact(gaussian_spec, sim1_data):
    grid = np.linspace(0, 1, 101)
    values = np.zeros((grid.size, 8))
    values[:, 2] = grid ** 3
    values[:, 3] = 2.0 - grid
    curve = _curve(gaussian_spec, grid, values, h=0.2)
    bias = estimate_bias(gaussian_spec, sim1_data, curve, 0.5, pilot_h=0.3)
    assert isclose(bias[2], 0.5 * 0.04 * 3.0 * 0.2, atol=1e-9)
    assert isclose(bias[3], 0.0, atol=1e-9)


def test_bias_of_cosine_curve(gaussian_spec, sim1_data):
    grid = np.linspace(0, 1, 201)
    values = np.zeros((grid.size, 8))
    values[:, 2] = np.cos(2 * np.pi * grid)
    curve = _curve(gaussian_spec, grid, values, h=0.2)
    bias = estimate_bias(gaussian_spec, sim1_data, curve, 0.5, pilot_h=0.21)
    assert abs(bias[2] - 0.1579) < 0.2 * 0.1579, f"bias {bias[2]} should be near 0.1579"


def test_fixed_coefficients_have_no_bias(gaussian_spec, sim1_data):
    grid = np.linspace(0, 1, 51)
    values = np.zeros((grid.size, 8))
    values[:, 6] = grid ** 2
    curve = _curve(gaussian_spec, grid, values, h=0.2, constants={'delta_1': 0.0})
    assert estimate_bias(gaussian_spec, sim1_data, curve, 0.5, pilot_h=0.4)[6] == 0.0


def test_centering_constant():
    d_n = centering_constant(0.18)
    assert isclose(d_n, 0.9800, atol=1e-3), f"d_n should be ~0.9800, is {d_n}"


def test_gumbel_critical_value():
    h = 0.18
    crit = gumbel_critical(h, 0.95)
    additive = (crit - centering_constant(h)) * np.sqrt(-2 * np.log(h))
    assert isclose(additive, 3.6633, atol=1e-4)
    assert gumbel_critical(h, 0.99) > crit > gumbel_critical(h, 0.90)


def test_band_argument_checks(gaussian_spec, sim1_fit, sim1_data):
    with pytest.raises(BandwidthGeqOne):
        centering_constant(1.0)
    with pytest.raises(UsageError):
        gumbel_critical(0.2, 1.5)
    wide = _curve(gaussian_spec, [0.0, 0.5, 1.0], np.zeros((3, 8)), h=1.0)
    with pytest.raises(BandwidthGeqOne):
        asymptotic_band(gaussian_spec, wide, sim1_data, 'alpha_1_0')
    with pytest.raises(TooFewReplicates):
        bootstrap_band(gaussian_spec, sim1_fit, sim1_data, 'alpha_1_0', M1=0, M2=200)
    with pytest.raises(TooFewReplicates):
        bootstrap_band(gaussian_spec, sim1_fit, sim1_data, 'alpha_1_0', M1=200, M2=49)


def test_asymptotic_band_shape(gaussian_spec, sim1_fit, sim1_data):
    bands = asymptotic_bands(sim1_fit, sim1_data, ['alpha_1_0', 'delta_2'], [0.90, 0.95])
    assert len(bands) == 4
    for band in bands:
        assert np.all(band.lower <= band.estimate) and np.all(band.estimate <= band.upper)
        assert band.covers(band.estimate)
    delta = [b for b in bands if b.coefficient == 'delta_2'][0]
    assert np.allclose(delta.estimate, np.exp(sim1_fit.coefficient('delta_2')))
    narrow, wide = [b for b in bands if b.coefficient == 'alpha_1_0']
    assert np.all(wide.upper - wide.lower >= narrow.upper - narrow.lower)
    frame = narrow.to_frame()
    assert list(frame.columns) == ['u', 'estimate', 'lower', 'upper']
    assert len(frame) == len(sim1_fit.grid)


def test_replicate_streams_do_not_depend_on_threads():
    serial = run_replicates(lambda rng: rng.random(), 10, seed=3, stream=1, threads=1)
    threaded = run_replicates(lambda rng: rng.random(), 10, seed=3, stream=1, threads=2)
    assert serial == threaded
    assert len(set(serial)) == 10


def test_replicate_failures():
    calls = []

    def once(rng):
        calls.append(1)
        if len(calls) == 1:
            raise SingularHessian("rank deficient")
        return 1.0

    def always(rng):
        raise SingularHessian("rank deficient")

    assert len(run_replicates(once, 20, seed=0, stream=1)) == 19
    with pytest.raises(ReplicateFailure):
        run_replicates(always, 20, seed=0, stream=1)


def test_replicate_failures_are_counted():
    calls = []

    def twice(rng):
        calls.append(1)
        if len(calls) <= 2:
            raise SingularHessian("rank deficient")
        return 1.0

    kept, failed = run_replicates(twice, 40, seed=2, stream=1, return_failures=True)
    assert len(kept) == 38
    assert failed == 2


def test_upper_quantile():
    assert upper_quantile(np.arange(101), 0.05) == 95.0


@pytest.mark.slow
def test_bootstrap_band(gaussian_spec, sim1_data):
    config = FitConfig(bandwidth=0.3, n_grid=9, max_iter=15)
    curve = fit_vcmoe(gaussian_spec, sim1_data, config)
    bands = bootstrap_bands(curve, sim1_data, ['alpha_2_0'], [0.95, 0.99], M1=50, M2=50, seed=7, config=config)
    assert bands[1].critical_value >= bands[0].critical_value
    assert np.all(bands[0].lower <= bands[0].estimate)
    again = bootstrap_bands(curve, sim1_data, ['alpha_2_0'], [0.95], M1=50, M2=50, seed=7, config=config, threads=2)
    assert np.array_equal(again[0].upper, bands[0].upper)


def test_sandwich_cov_checks_the_model(sim1_fit, sim1_data, gaussian_spec):
    cov = sandwich_cov(gaussian_spec, sim1_fit, sim1_data, 0.5)
    assert cov.shape == (gaussian_spec.n_coefficients, gaussian_spec.n_coefficients)
    with pytest.raises(DimensionMismatch):
        sandwich_cov(ModelSpec(2, 1, 1), sim1_fit, sim1_data, 0.5)


def test_bootstrap_band_reports_skipped_replicates(monkeypatch, sim1_fit, sim1_data):
    G = len(sim1_fit.grid)
    k = sim1_fit.spec.index('alpha_1_0')

    def fixed_replicates(work, count, seed, stream, threads=1, what='bootstrap', return_failures=False):
        rng = np.random.default_rng(stream)
        skipped = 2 if stream == 1 else 1
        kept = [sim1_fit.values[None, :, k] + rng.normal(size=(1, G)) for _ in range(count - skipped)]
        return kept, skipped

    monkeypatch.setattr(bands_module, 'run_replicates', fixed_replicates)
    band = bootstrap_band(sim1_fit.spec, sim1_fit, sim1_data, 'alpha_1_0', M1=50, M2=50)
    assert band.skipped == 3
    assert band.as_dict()['skipped'] == 3
    assert np.all(band.lower < band.estimate) and np.all(band.estimate < band.upper)
