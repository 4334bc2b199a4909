"""
Parametric bootstrap from a fitted curve.

Covariates and index values stay fixed; each replicate redraws y_i from the fitted
conditional mixture at (u_i, x_i, z_i) and refits, starting from the responsibilities of
the original estimate on the new responses.
"""
import logging

import numpy as np

from vcmoe.base.errors import NumericalError, ReplicateFailure, TooFewReplicates
from vcmoe.base.model import sample_mixture
from vcmoe.base.utilities import parallel_map, stream_rng
from vcmoe.estimation.em import INIT_PROVIDED, FitConfig, e_step, fit_vcmoe

logger = logging.getLogger(__name__)

MIN_REPLICATES = 50
MAX_FAILURE_SHARE = 0.10


def check_replicates(**counts):
    for name, value in counts.items():
        if value is None or value < MIN_REPLICATES:
            raise TooFewReplicates(name, value, MIN_REPLICATES)


def resample(curve, data, rng):
    """A bootstrap dataset: new responses from the fitted curve, covariates unchanged."""
    _, y = sample_mixture(curve.spec, curve.interpolate(data.u), data.X, data.Z, rng)
    return data.with_response(y)


def refit(curve, data, config, spec=None, fixed=None):
    """Fit `spec` (default: the curve's) on bootstrap data, initialized from the original estimate."""
    spec = spec or curve.spec
    gamma = e_step(curve.spec, curve, data).gamma
    return fit_vcmoe(spec, data, config.replace(init=INIT_PROVIDED, responsibilities=gamma, threads=1), fixed)


def replicate_config(curve, config=None):
    if config is not None:
        return config
    return FitConfig(bandwidth=curve.bandwidth, grid=tuple(curve.grid))


def run_replicates(work, count, seed, stream, threads=1, what='bootstrap', return_failures=False):
    """
    Run work(rng) for count independent streams; failed replicates are dropped.

    Raises ReplicateFailure when more than 10% fail. With return_failures the
    number of skipped replicates is returned alongside the results.
    """

    def one(k):
        try:
            return work(stream_rng(seed, stream, k))
        except NumericalError as err:
            logger.debug("%s replicate %d failed: %s", what, k, err)
            return None

    results = parallel_map(one, range(count), threads)
    kept = [r for r in results if r is not None]
    failed = count - len(kept)
    if failed > MAX_FAILURE_SHARE * count:
        raise ReplicateFailure(failed, count)
    if failed:
        logger.info("%d of %d %s replicates failed and were skipped", failed, count, what)
    return (kept, failed) if return_failures else kept


def coefficient_curves(curve, names, natural=True):
    """(len(names), G) grid curves; dispersions on the delta scale when natural."""
    return np.array([curve.coefficient(name, natural=natural) for name in names])
