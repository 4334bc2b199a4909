"""
Sandwich covariance and plug-in bias of the local estimates.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from vcmoe.base.errors import DimensionMismatch, NoEffectiveSamples, PilotTooSmall
from vcmoe.base.kernel import get_kernel
from vcmoe.base.model import posterior
from vcmoe.base.utilities import parallel_map
from vcmoe.estimation.local import LocalProblem

logger = logging.getLogger(__name__)

PSD_TOLERANCE = 1e-8
DEBIAS = 'debias'
UNDERSMOOTH = 'undersmooth'


@dataclass
class Sandwich:
    """Covariance of the coefficient values at one point, in coefficient order (fixed entries zero)."""
    cov: np.ndarray
    pinv_used: bool = False
    clipped: bool = False


def _local_problem(curve, data, u, gamma, kernel):
    spec = curve.spec
    values = curve.interpolate(u)[0]
    slopes = curve.interpolate_slopes(u)[0]
    uniform = np.full((data.n, spec.n_components), 1.0 / spec.n_components)
    problem = LocalProblem(spec, data, uniform, u, curve.bandwidth, kernel, curve.constants)
    params = problem.params(values, slopes)
    if gamma is None:
        log_pi, log_phi = problem.component_log_terms(params)
        problem.gamma = posterior(log_pi + log_phi, log_pi)
    else:
        problem.gamma = np.asarray(getattr(gamma, 'gamma', gamma), dtype=float)[problem.rows]
    return problem, params


def sandwich(curve, data, u, gamma=None, kernel=None):
    """
    Sandwich H^-1 M H^-1 at u.

    H is the observed local information, the expected complete-data Hessian corrected by
    the missing information; M sums squared kernel weights times outer products of the
    posterior-weighted scores. The posterior defaults to the local-linear fit's own; pass
    `gamma` (n, C) to override it.
    """
    kernel = kernel or get_kernel()
    spec = curve.spec
    problem, params = _local_problem(curve, data, u, gamma, kernel)
    _, _, hess = problem.value_grad_hess(params)
    S = problem.component_scores(params)
    g = problem.gamma
    mean_score = np.einsum('ic,icp->ip', g, S)
    w = problem.w
    missing = np.einsum('i,ic,icp,icq->pq', w, g, S, S) - (mean_score * w[:, None]).T @ mean_score
    H = hess + missing
    meat = (mean_score * (w * w)[:, None]).T @ mean_score
    pinv_used = False
    try:
        factor = linalg.cho_factor(-H)
        bread = linalg.cho_solve(factor, np.eye(H.shape[0]))
    except linalg.LinAlgError:
        logger.warning("Local information not definite at u=%.4f; using the pseudo-inverse", u)
        bread = np.linalg.pinv(-H)
        pinv_used = True
    local = bread @ meat @ bread
    local = 0.5 * (local + local.T)

    P = spec.n_coefficients
    cov = np.zeros((P, P))
    value_pos, coef_idx = [], []
    offset = 0
    for block in problem.blocks:
        for i, (k, is_slope) in enumerate(block.positions):
            if not is_slope:
                value_pos.append(offset + i)
                coef_idx.append(k)
        offset += block.size
    cov[np.ix_(coef_idx, coef_idx)] = local[np.ix_(value_pos, value_pos)]
    cov, clipped = clip_psd(cov, u)
    return Sandwich(cov, pinv_used, clipped)


def sandwich_cov(spec, curve, data, u, gamma=None):
    """Covariance matrix (P, P) of theta_hat(u) in the coefficient order of `spec`; see `sandwich`."""
    if spec.coefficient_names != curve.spec.coefficient_names:
        raise DimensionMismatch("the model and the fitted curve have different coefficients")
    return sandwich(curve, data, u, gamma).cov


def clip_psd(cov, u=None):
    eig, vec = np.linalg.eigh(cov)
    if eig.min() >= 0:
        return cov, False
    if eig.min() < -PSD_TOLERANCE * max(1.0, eig.max()):
        logger.warning("Covariance at u=%s had eigenvalue %.3g; clipped to zero", u, eig.min())
    eig = np.clip(eig, 0.0, None)
    return (vec * eig) @ vec.T, True


def second_derivative(grid, curve_values, u, pilot_h, kernel=None):
    """theta''(u) from a kernel-weighted local cubic fit of a grid curve with bandwidth pilot_h."""
    kernel = kernel or get_kernel()
    t = np.asarray(grid) - u
    w = kernel.scaled_weight(t, pilot_h)
    keep = w > 0
    if keep.sum() < 4:
        raise NoEffectiveSamples(u, pilot_h)
    design = np.vander(t[keep], 4, increasing=True)
    root = np.sqrt(w[keep])
    coef, *_ = np.linalg.lstsq(design * root[:, None], np.asarray(curve_values)[keep] * root, rcond=None)
    return 2.0 * coef[2]


def estimate_bias(spec, data, curve, u, pilot_h, mode=DEBIAS, kernel=None):
    """
    Plug-in bias h^2 theta''(u) v2 / 2 for every coefficient; zeros in undersmooth mode.
    """
    h = curve.bandwidth
    if not pilot_h > h:
        raise PilotTooSmall(pilot_h, h)
    if mode == UNDERSMOOTH:
        return np.zeros(spec.n_coefficients)
    kernel = kernel or get_kernel()
    v2 = kernel.constants().v2
    second = np.array([second_derivative(curve.grid, curve.values[:, k], u, pilot_h, kernel)
                       for k in range(spec.n_coefficients)])
    bias = 0.5 * h * h * second * v2
    for name in curve.constants:
        bias[spec.index(name)] = 0.0
    return bias


@dataclass
class CovCurve:
    """Sandwich covariances (G, P, P) and bias vectors (G, P) over the fit grid."""
    grid: np.ndarray
    cov: np.ndarray
    bias: np.ndarray
    pinv_nodes: list = field(default_factory=list)
    clipped: int = 0

    def variance(self, k):
        return self.cov[:, k, k]


def covariance_curve(curve, data, pilot_h=None, mode=UNDERSMOOTH, threads=1):
    """Sandwich covariance and bias at every grid node; pilot_h defaults to 2h."""
    spec = curve.spec
    pilot_h = 2.0 * curve.bandwidth if pilot_h is None else pilot_h
    results = parallel_map(lambda u: sandwich(curve, data, u), curve.grid, threads)
    cov = np.array([r.cov for r in results])
    bias = np.array([estimate_bias(spec, data, curve, u, pilot_h, mode) for u in curve.grid])
    pinv_nodes = [float(u) for u, r in zip(curve.grid, results) if r.pinv_used]
    clipped = sum(r.clipped for r in results)
    if clipped:
        logger.warning("Clipped %d of %d grid covariances to be positive semidefinite", clipped, len(curve.grid))
    return CovCurve(curve.grid, cov, bias, pinv_nodes, clipped)
