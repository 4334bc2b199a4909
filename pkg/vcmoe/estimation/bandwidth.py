import logging
from dataclasses import dataclass

import numpy as np

from vcmoe.base.errors import AllFoldsFailed, InsufficientData, NonPositiveBandwidth, NumericalError, UsageError
from vcmoe.base.model import mixture_log_densities
from vcmoe.base.utilities import parallel_map
from vcmoe.estimation.em import INIT_PROVIDED, FitConfig, fit_vcmoe

logger = logging.getLogger(__name__)

LOO_MAX_ITER = 20


@dataclass
class CvReport:
    """Leave-one-out likelihood scores per candidate bandwidth."""
    candidates: list
    scores: list
    best_h: float
    failures: list

    def as_dict(self):
        return dict(candidates=list(self.candidates), scores=[float(s) for s in self.scores],
                    best_h=self.best_h, per_fold_failures=list(self.failures))


def default_candidates(data, count=10):
    """count log-spaced bandwidths in [0.5 h0, 2 h0] around the rule of thumb h0 = 1.06 sd(u) n^(-1/5)."""
    h0 = 1.06 * np.std(data.u, ddof=1) * data.n ** (-0.2)
    return np.geomspace(0.5 * h0, 2.0 * h0, count).tolist()


def loo_config(config, h, gamma, i):
    """Settings of the fold leaving out observation i, warm-started from the full-data responsibilities."""
    return config.replace(bandwidth=h, init=INIT_PROVIDED, responsibilities=np.delete(gamma, i, axis=0),
                          max_iter=min(config.max_iter, LOO_MAX_ITER), threads=1)


def cv_score(spec, data, h, config, return_failures=False):
    """
    CV(h) = sum_i log f(y_i | theta_hat_(-i)(u_i)).

    Each fold refits without observation i, starting from the full-data fit's
    responsibilities. Folds whose fit fails numerically are skipped and counted.
    """
    if not h > 0:
        raise NonPositiveBandwidth(h)
    if data.n < 3:
        raise InsufficientData(f"cross-validation needs at least 3 observations, got {data.n}")
    full = fit_vcmoe(spec, data, config.replace(bandwidth=h, threads=1))
    gamma = full.responsibilities.gamma
    score, failures = 0.0, 0
    for i in range(data.n):
        try:
            curve = fit_vcmoe(spec, data.drop(i), loo_config(config, h, gamma, i))
        except NumericalError as err:
            failures += 1
            logger.debug("h=%g: skipped fold %d (%s)", h, i, err)
            continue
        row = curve.interpolate(data.u[i])
        score += float(mixture_log_densities(spec, row, data.X[i:i + 1], data.Z[i:i + 1], data.y[i:i + 1])[0])
    if failures == data.n:
        raise AllFoldsFailed(f"every leave-one-out fit failed at h={h}")
    if failures:
        logger.info("h=%g: %d of %d folds skipped", h, failures, data.n)
    return (score, failures) if return_failures else score


def select_bandwidth(spec, data, candidates=None, config=None):
    """
    Evaluate CV(h) for each candidate and pick the maximizer; ties go to the larger h.

    Candidates run through joblib with config.threads workers. Without a config the
    package defaults apply.
    """
    candidates = default_candidates(data) if candidates is None else [float(h) for h in candidates]
    if not candidates:
        raise UsageError("no candidate bandwidths given")
    for h in candidates:
        if not h > 0:
            raise NonPositiveBandwidth(h)
    config = FitConfig(bandwidth=candidates[0]) if config is None else config

    def evaluate(h):
        try:
            return cv_score(spec, data, h, config, return_failures=True)
        except NumericalError as err:
            logger.warning("h=%g: cross-validation failed (%s)", h, err)
            return -np.inf, data.n

    results = parallel_map(evaluate, candidates, config.threads)
    scores = [s for s, _ in results]
    failures = [f for _, f in results]
    if not np.any(np.isfinite(scores)):
        raise AllFoldsFailed("cross-validation failed for every candidate bandwidth")
    best = max(range(len(candidates)), key=lambda k: (scores[k], candidates[k]))
    logger.info("Selected bandwidth h=%g (CV=%.4f)", candidates[best], scores[best])
    return CvReport(candidates, scores, candidates[best], failures)
