"""
Simultaneous confidence bands for one coefficient function over the fit grid.

Dispersion bands are reported for delta itself; its standard error comes from the
log-scale estimate by the delta method.
"""
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from vcmoe.base.errors import BandwidthGeqOne, UsageError
from vcmoe.base.kernel import get_kernel
from vcmoe.base.utilities import BOOTSTRAP_SUP_STREAM, BOOTSTRAP_VARIANCE_STREAM, upper_quantile
from vcmoe.inference.bootstrap import (check_replicates, coefficient_curves, refit, replicate_config,
                                       resample, run_replicates)
from vcmoe.inference.covariance import DEBIAS, UNDERSMOOTH, covariance_curve

logger = logging.getLogger(__name__)

ASYMPTOTIC = 'asymptotic'
BOOTSTRAP = 'bootstrap'
UNDERSMOOTH_FACTOR = 0.85


@dataclass
class BandResult:
    coefficient: str
    grid: np.ndarray
    estimate: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    critical_value: float
    level: float
    method: str
    debias: bool
    h_used: float
    skipped: int = 0

    def covers(self, truth):
        truth = np.asarray(truth, dtype=float)
        return bool(np.all((self.lower <= truth) & (truth <= self.upper)))

    def to_frame(self, index_map=None):
        u = self.grid if index_map is None else index_map.inverse(self.grid)
        return pd.DataFrame(dict(u=u, estimate=self.estimate, lower=self.lower, upper=self.upper))

    def as_dict(self):
        return dict(coefficient=self.coefficient, grid=self.grid.tolist(), estimate=self.estimate.tolist(),
                    lower=self.lower.tolist(), upper=self.upper.tolist(), critical_value=self.critical_value,
                    level=self.level, method=self.method, debias=self.debias, h_used=self.h_used,
                    skipped=self.skipped)


def check_level(level):
    if not 0 < level < 1:
        raise UsageError(f"confidence level must lie in (0, 1), got {level!r}")
    return float(level)


def centering_constant(h, kernel=None):
    """
    d_n of the sup-deviation limit law.

    Kernels vanishing at the support edge use the derivative form; others the K(A) form.
    """
    if not 0 < h < 1:
        raise BandwidthGeqOne(h)
    kernel = kernel or get_kernel()
    const = kernel.constants()
    two_log = -2.0 * np.log(h)
    edge = kernel.boundary_value()
    if edge > 0:
        tail = np.log(edge ** 2 / (const.tau * np.sqrt(np.pi))) + 0.5 * np.log(np.log(1.0 / h))
    else:
        tail = np.log(const.deriv_sq_integral / (4.0 * const.tau * np.pi))
    return float(np.sqrt(two_log) + tail / np.sqrt(two_log))


def gumbel_critical(h, level, kernel=None):
    """d_n + [log 2 - log(-log(level))] / sqrt(-2 log h)."""
    eta = 1.0 - check_level(level)
    d_n = centering_constant(h, kernel)
    return d_n + (np.log(2.0) - np.log(-np.log(1.0 - eta))) / np.sqrt(-2.0 * np.log(h))


def _natural(spec, name, estimate, sd, bias):
    """Map a log-dispersion estimate, sd and bias onto the delta scale."""
    if spec.describe(name)[0] != 'delta':
        return estimate, sd, bias
    delta = np.exp(estimate)
    return delta, delta * sd, delta * bias


def asymptotic_bands(curve, data, coefficients, levels, debias=False, pilot_h=None, cov_curve=None, threads=1):
    """Gumbel-calibrated bands for every (coefficient, level) pair from one set of sandwich covariances."""
    spec = curve.spec
    levels = [check_level(level) for level in levels]
    h = curve.bandwidth
    if not h < 1:
        raise BandwidthGeqOne(h)
    if cov_curve is None:
        cov_curve = covariance_curve(curve, data, pilot_h, DEBIAS if debias else UNDERSMOOTH, threads)
    results = []
    for name in coefficients:
        k = spec.index(name)
        sd = np.sqrt(cov_curve.variance(k))
        estimate, sd, bias = _natural(spec, name, curve.values[:, k], sd, cov_curve.bias[:, k])
        center = estimate - bias
        for level in levels:
            crit = gumbel_critical(h, level)
            results.append(BandResult(name, curve.grid, estimate, center - crit * sd, center + crit * sd,
                                      float(crit), level, ASYMPTOTIC, bool(debias), h))
    return results


def asymptotic_band(spec, curve, data, coefficient, level=0.95, debias=False, pilot_h=None):
    spec.index(coefficient)
    return asymptotic_bands(curve, data, [coefficient], [level], debias, pilot_h)[0]


def bootstrap_bands(curve, data, coefficients, levels, M1=200, M2=200, seed=0, config=None, threads=1):
    """
    Parametric-bootstrap bands for every (coefficient, level) pair.

    M1 replicates estimate the pointwise variance; M2 further replicates give the sup of
    the standardized deviation, whose upper quantile is the critical value.
    """
    check_replicates(M1=M1, M2=M2)
    levels = [check_level(level) for level in levels]
    for name in coefficients:
        curve.spec.index(name)
    config = replicate_config(curve, config)

    def work(rng):
        return coefficient_curves(refit(curve, resample(curve, data, rng), config), coefficients)

    first, skipped_first = run_replicates(work, M1, seed, BOOTSTRAP_VARIANCE_STREAM, threads, return_failures=True)
    second, skipped_second = run_replicates(work, M2, seed, BOOTSTRAP_SUP_STREAM, threads, return_failures=True)
    first, second = np.array(first), np.array(second)
    skipped = skipped_first + skipped_second
    estimate = coefficient_curves(curve, coefficients)
    sd = np.sqrt(np.var(first, axis=0, ddof=1))
    sd = np.where(sd > 0, sd, np.finfo(float).tiny)
    sup = np.max(np.abs(second - estimate[None]) / sd[None], axis=2)
    logger.info("Bootstrap bands from %d variance and %d sup replicates", first.shape[0], second.shape[0])
    results = []
    for p, name in enumerate(coefficients):
        for level in levels:
            crit = upper_quantile(sup[:, p], 1.0 - level)
            results.append(BandResult(name, curve.grid, estimate[p], estimate[p] - crit * sd[p],
                                      estimate[p] + crit * sd[p], crit, level, BOOTSTRAP, False, curve.bandwidth,
                                      skipped))
    return results


def bootstrap_band(spec, curve, data, coefficient, level=0.95, M1=200, M2=200, seed=0, config=None, threads=1):
    spec.index(coefficient)
    return bootstrap_bands(curve, data, [coefficient], [level], M1, M2, seed, config, threads)[0]
