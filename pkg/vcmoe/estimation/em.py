"""
Label-consistent EM over a grid of local-linear models.

One global E-step uses the current curve interpolated at every observation's index; the
M-step then re-solves every grid node's local problem in a left-to-right sweep, so the
component labels are shared by all nodes.
"""
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from vcmoe.base.errors import DimensionMismatch, UsageError, NonPositiveBandwidth
from vcmoe.base.kernel import get_kernel
from vcmoe.base.model import (GAUSSIAN, Responsibilities, ThetaPoint, component_log_terms,
                              mixture_log_densities, posterior)
from vcmoe.base.utilities import INIT_STREAM, check_grid, interp_rows, stream_rng
from vcmoe.estimation.local import LocalProblem, newton_maximize

logger = logging.getLogger(__name__)

INIT_RANDOM = 'random'
INIT_QUANTILE = 'quantile'
INIT_PROVIDED = 'provided'

CRITERION_LOGLIK = 'loglik'
CRITERION_COEF_SUM = 'coef_sum'


@dataclass(frozen=True)
class FitConfig:
    """
    Settings of one fit.

    Arguments:
        bandwidth: kernel bandwidth h > 0
        grid: strictly increasing nodes in [0, 1]; n_grid equispaced nodes when None
        max_iter: EM iterations after the initial M-step
        tol: stopping tolerance of `criterion`
        init: 'random' (Dirichlet rows), 'quantile' (response quantile bins) or 'provided'
        responsibilities: (n, C) starting responsibilities for init='provided'
        criterion: 'loglik' (relative change of the mean log mixture density) or
            'coef_sum' (absolute change of the summed coefficient curves)
    """
    bandwidth: float
    grid: tuple = None
    n_grid: int = 100
    max_iter: int = 200
    tol: float = 1e-6
    init: str = INIT_QUANTILE
    responsibilities: object = field(default=None, repr=False, compare=False)
    seed: int = 0
    criterion: str = CRITERION_LOGLIK
    newton_max_iter: int = 50
    newton_tol: float = 1e-8
    max_damping: float = 1e6
    threads: int = 1
    kernel: str = 'epanechnikov'

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise NonPositiveBandwidth(self.bandwidth)
        if self.grid is not None:
            object.__setattr__(self, 'grid', tuple(check_grid(self.grid).tolist()))
        elif self.n_grid < 2:
            raise UsageError(f"n_grid must be at least 2, got {self.n_grid}")
        if not self.tol > 0:
            raise UsageError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 0:
            raise UsageError(f"max_iter must be non-negative, got {self.max_iter}")
        if self.init not in (INIT_RANDOM, INIT_QUANTILE, INIT_PROVIDED):
            raise UsageError(f"unknown initialization {self.init!r}")
        if self.init == INIT_PROVIDED and self.responsibilities is None:
            raise UsageError("init='provided' needs responsibilities")
        if self.criterion not in (CRITERION_LOGLIK, CRITERION_COEF_SUM):
            raise UsageError(f"unknown convergence criterion {self.criterion!r}")
        if self.threads < 1:
            raise UsageError(f"threads must be at least 1, got {self.threads}")
        get_kernel(self.kernel)

    @property
    def grid_points(self):
        if self.grid is None:
            return np.linspace(0.0, 1.0, self.n_grid)
        return np.array(self.grid)

    def replace(self, **changes):
        return replace(self, **changes)

    def as_dict(self):
        d = dict(bandwidth=self.bandwidth, grid=None if self.grid is None else list(self.grid), n_grid=self.n_grid,
                 max_iter=self.max_iter, tol=self.tol, init=self.init, seed=self.seed, criterion=self.criterion,
                 newton_max_iter=self.newton_max_iter, newton_tol=self.newton_tol, max_damping=self.max_damping,
                 threads=self.threads, kernel=self.kernel)
        return d

    @classmethod
    def from_dict(cls, d):
        d = {k: v for k, v in d.items() if k in cls.__dataclass_fields__ and k != 'responsibilities'}
        if d.get('init') == INIT_PROVIDED:
            d['init'] = INIT_QUANTILE
        return cls(**d)


@dataclass
class ThetaCurve:
    """
    Estimated coefficient curves on the fit grid.

    values and slopes are (G, P) in coefficient order, with log delta for the dispersions.
    frozen[g, c] marks nodes where component c was held at its neighbor's value.
    constants maps every coefficient held fixed during the final EM run to its value.
    """
    spec: object
    grid: np.ndarray
    values: np.ndarray
    slopes: np.ndarray
    responsibilities: Responsibilities
    bandwidth: float
    loglik_trace: list = field(default_factory=list)
    converged: bool = False
    n_iter: int = 0
    frozen: np.ndarray = None
    constants: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.frozen is None:
            self.frozen = np.zeros((len(self.grid), self.spec.n_components), dtype=bool)

    @property
    def points(self):
        return [ThetaPoint.from_vectors(self.spec, v, s) for v, s in zip(self.values, self.slopes)]

    @property
    def loglik(self):
        return self.loglik_trace[-1] if self.loglik_trace else float('nan')

    def coefficient(self, name, natural=False):
        """Grid curve of one coefficient; natural=True reports delta instead of log delta."""
        k = self.spec.index(name)
        curve = self.values[:, k]
        if natural and self.spec.describe(name)[0] == 'delta':
            return np.exp(curve)
        return curve.copy()

    def interpolate(self, u):
        """Coefficient rows (n, P) linearly interpolated at u (values only)."""
        return interp_rows(self.grid, self.values, u)

    def interpolate_slopes(self, u):
        return interp_rows(self.grid, self.slopes, u)

    def log_densities(self, data):
        """log f(y_i | theta(u_i)) for every observation."""
        return mixture_log_densities(self.spec, self.interpolate(data.u), data.X, data.Z, data.y)

    def as_dict(self):
        names = self.spec.coefficient_names
        return dict(
            grid=self.grid.tolist(),
            bandwidth=self.bandwidth,
            values={name: self.values[:, k].tolist() for k, name in enumerate(names)},
            slopes={name: self.slopes[:, k].tolist() for k, name in enumerate(names)},
            constants=dict(self.constants),
            responsibilities=self.responsibilities.summary(),
            diagnostics=dict(converged=self.converged, n_iter=self.n_iter, loglik_trace=list(self.loglik_trace),
                             frozen_nodes=int(self.frozen.sum())),
        )

    @classmethod
    def from_dict(cls, spec, d, responsibilities=None):
        names = spec.coefficient_names
        values = np.column_stack([d['values'][name] for name in names])
        slopes = np.column_stack([d['slopes'][name] for name in names])
        diag = d.get('diagnostics', {})
        if responsibilities is None:
            responsibilities = Responsibilities(np.full((1, spec.n_components), 1.0 / spec.n_components))
        return cls(spec, np.asarray(d['grid'], dtype=float), values, slopes, responsibilities, d['bandwidth'],
                   list(diag.get('loglik_trace', [])), bool(diag.get('converged', False)), int(diag.get('n_iter', 0)),
                   constants=dict(d.get('constants', {})))


def evaluate_curve(curve, u_query):
    """
    ThetaPoint at u_query by piecewise-linear interpolation of the node values.

    A scalar query returns one ThetaPoint, an array a list of them.
    """
    rows = curve.interpolate(u_query)
    points = [ThetaPoint.from_vectors(curve.spec, row) for row in rows]
    return points[0] if np.ndim(u_query) == 0 else points


def init_responsibilities(spec, data, config):
    C, n = spec.n_components, data.n
    if config.init == INIT_PROVIDED:
        gamma = np.asarray(getattr(config.responsibilities, 'gamma', config.responsibilities), dtype=float)
        if gamma.shape != (n, C):
            raise DimensionMismatch(f"provided responsibilities have shape {gamma.shape}, expected {(n, C)}")
        return Responsibilities(gamma / gamma.sum(axis=1, keepdims=True))
    if config.init == INIT_RANDOM:
        rng = stream_rng(config.seed, INIT_STREAM)
        return Responsibilities(rng.dirichlet(np.ones(C), size=n))
    # quantile split: component 1 takes the lowest responses
    edges = np.quantile(data.y, np.linspace(0.0, 1.0, C + 1)[1:-1])
    labels = np.searchsorted(edges, data.y, side='right')
    labels = np.minimum(labels, C - 1)
    gamma = np.full((n, C), 0.1 / (C - 1))
    gamma[np.arange(n), labels] = 0.9
    return Responsibilities(gamma)


def initial_point(spec, gamma, data, fixed=None):
    """
    Global starting values: zero gating, gamma-weighted least squares for the experts.

    Binomial experts regress the empirical logit with weights gamma m p (1 - p).
    """
    gamma = np.asarray(getattr(gamma, 'gamma', gamma))
    Z, y = data.Z, data.y
    beta = np.zeros((spec.n_gates, spec.p_x))
    alpha = np.zeros((spec.n_components, spec.p_z))
    log_delta = np.zeros(spec.n_components)
    ridge = 1e-8 * np.eye(spec.p_z)
    for c in range(spec.n_components):
        g = gamma[:, c] + 1e-12
        if spec.expert == GAUSSIAN:
            target, w = y, g
        else:
            m = spec.trials
            p = (y + 0.5) / (m + 1.0)
            target, w = np.log(p / (1.0 - p)), g * m * p * (1.0 - p)
        A = (Z * w[:, None]).T @ Z
        alpha[c] = np.linalg.solve(A + ridge * np.trace(A), (Z * w[:, None]).T @ target)
        if spec.expert == GAUSSIAN:
            resid = y - Z @ alpha[c]
            log_delta[c] = 0.5 * np.log(max(np.sum(g * resid ** 2) / np.sum(g), 1e-6))
    values = ThetaPoint(beta, alpha, log_delta).values(spec)
    for name, v in (fixed or {}).items():
        values[spec.index(name)] = v
    return values


class MStep(object):
    """
    Grid sweep of local maximizations for fixed responsibilities.

    At each node every block starts from whichever of the neighboring node's solution,
    the previous iteration's value at the node and the global initial point gives the
    largest Q, so Q never decreases at a node.
    """

    MIN_DISPERSION = 1e-4
    Q_TOLERANCE = 1e-8

    def __init__(self, spec, data, config, fixed=None):
        self.spec = spec
        self.data = data
        self.config = config
        self.fixed = dict(fixed or {})
        self.kernel = get_kernel(config.kernel)
        self.grid = config.grid_points

    def _min_mass(self):
        return 2.0 * self.spec.n_components

    def solve_node(self, gamma, u, starts, previous=None):
        """
        Maximize Q at u. Returns (values, slopes, frozen flags per component, Q).

        starts: list of (values, slopes) candidates, neighbor first
        previous: the previous iteration's (values, slopes) at this node
        """
        cfg = self.config
        problem = LocalProblem(self.spec, self.data, gamma, u, cfg.bandwidth, self.kernel, self.fixed)
        candidates = list(starts) + ([previous] if previous is not None else [])
        params = [problem.params(v, s) for v, s in candidates]
        values, slopes = problem.coefficients(params[0], *candidates[0])
        frozen = np.zeros(self.spec.n_components, dtype=bool)
        q_total = 0.0
        for b_idx, (block, sl) in enumerate(zip(problem.blocks, problem.slices)):
            if block.size == 0:
                continue
            thetas = [p[sl] for p in params]
            qs = np.array([block.evaluate(t)[0] for t in thetas])
            qs[~np.isfinite(qs)] = -np.inf
            best = int(np.argmax(qs))
            c = b_idx - 1
            if c >= 0 and problem.kernel_mass(c) < self._min_mass():
                frozen[c] = True
                block.scatter(thetas[0], values, slopes)
                continue
            block.check_rank()
            result = newton_maximize(block.evaluate, thetas[best], max_iter=cfg.newton_max_iter, tol=cfg.newton_tol,
                                     max_damping=cfg.max_damping, label=f"u={u:.4f} {block.name}")
            if previous is not None:
                assert result.value >= qs[-1] - self.Q_TOLERANCE * max(1.0, abs(qs[-1])), \
                    f"Q decreased at u={u:.4f} {block.name}: {qs[-1]} -> {result.value}"
            if c >= 0 and self.spec.has_dispersion and np.exp(block.log_delta_at_node(result.x)) < self.MIN_DISPERSION:
                frozen[c] = True
                block.scatter(thetas[0], values, slopes)
                continue
            block.scatter(result.x, values, slopes)
            q_total += result.value
        return values, slopes, frozen, q_total

    def __call__(self, gamma, previous=None):
        """Sweep the grid left to right; returns (values, slopes, frozen), each indexed by node."""
        gamma = np.asarray(getattr(gamma, 'gamma', gamma))
        G, P = len(self.grid), self.spec.n_coefficients
        start = initial_point(self.spec, gamma, self.data, self.fixed)
        zeros = np.zeros(P)
        values, slopes = np.zeros((G, P)), np.zeros((G, P))
        frozen = np.zeros((G, self.spec.n_components), dtype=bool)
        for g, u in enumerate(self.grid):
            starts = [(values[g - 1], slopes[g - 1])] if g > 0 else []
            starts.append((start, zeros))
            prev = (previous.values[g], previous.slopes[g]) if previous is not None else None
            if g == 0 and prev is not None:
                starts.insert(0, prev)
            values[g], slopes[g], frozen[g], _ = self.solve_node(gamma, u, starts, prev)
        if frozen.any():
            logger.warning("Froze %d degenerate component/node pairs (mass < %g or delta < %g)",
                           int(frozen.sum()), self._min_mass(), self.MIN_DISPERSION)
        return values, slopes, frozen


def m_step(spec, gamma, data, config, previous=None, fixed=None):
    """Coefficient values, slopes and freeze flags at every grid node for fixed responsibilities."""
    return MStep(spec, data, config, fixed)(gamma, previous)


def e_step(spec, curve, data):
    """Posterior responsibilities under the curve interpolated at each u_i (values only)."""
    log_pi, log_phi = component_log_terms(spec, curve.interpolate(data.u), data.X, data.Z, data.y)
    return Responsibilities(posterior(log_pi + log_phi, log_pi))


def average_at_observations(curve, data, names):
    """Constant estimates n^-1 sum_i theta_hat(u_i) for each named coefficient."""
    rows = curve.interpolate(data.u)
    return {name: float(np.mean(rows[:, curve.spec.index(name)])) for name in names}


def _run_em(spec, data, config, fixed):
    mstep = MStep(spec, data, config, fixed)
    gamma = init_responsibilities(spec, data, config)
    values, slopes, frozen = mstep(gamma)
    curve = ThetaCurve(spec, mstep.grid, values, slopes, gamma, config.bandwidth, frozen=frozen,
                       constants=dict(fixed))
    curve.loglik_trace.append(float(np.mean(curve.log_densities(data))))
    if config.max_iter == 0:
        return curve
    for it in range(1, config.max_iter + 1):
        gamma = e_step(spec, curve, data)
        values, slopes, frozen = mstep(gamma, previous=curve)
        new = ThetaCurve(spec, mstep.grid, values, slopes, gamma, config.bandwidth, list(curve.loglik_trace),
                         n_iter=it, frozen=frozen, constants=dict(fixed))
        new.loglik_trace.append(float(np.mean(new.log_densities(data))))
        if config.criterion == CRITERION_LOGLIK:
            old_ll, new_ll = new.loglik_trace[-2], new.loglik_trace[-1]
            change = abs(new_ll - old_ll) / max(abs(old_ll), 1e-12)
        else:
            change = abs(np.sum(new.values) - np.sum(curve.values))
        logger.debug("EM iteration %d: mean loglik %.8f, change %.3g", it, new.loglik_trace[-1], change)
        curve = new
        if change < config.tol:
            curve.converged = True
            break
    curve.responsibilities = e_step(spec, curve, data)
    if curve.converged:
        logger.info("EM converged after %d iterations (mean loglik %.6f, h=%g)", curve.n_iter, curve.loglik,
                    config.bandwidth)
    else:
        logger.warning("EM stopped at max_iter=%d without converging (mean loglik %.6f)", config.max_iter, curve.loglik)
    return curve


def fit_vcmoe(spec, data, config, fixed=None):
    """
    Fit the varying-coefficient mixture of experts.

    Coefficients in spec.constant that are not given in `fixed` are estimated by the
    two-step procedure: a fully functional fit, the average of each such curve over the
    observation points, then EM again with those coefficients held at the averages,
    started from the first fit's responsibilities.
    """
    data.check(spec)
    fixed = dict(fixed or {})
    for name in fixed:
        spec.index(name)
    pending = sorted(set(spec.constant) - set(fixed), key=spec.index)
    if not pending:
        return _run_em(spec, data, config, fixed)
    logger.info("Two-step fit for constant coefficients %s", pending)
    functional = _run_em(spec, data, config, fixed)
    constants = average_at_observations(functional, data, pending)
    refit = config.replace(init=INIT_PROVIDED, responsibilities=functional.responsibilities.gamma)
    return _run_em(spec, data, refit, {**fixed, **constants})


def fit_constant(spec, data, config, target, fixed=None):
    """
    Estimate a coefficient that is constant in u.

    Returns (constant estimate, ThetaCurve refitted with the coefficient held at it).
    """
    if target not in spec.constant:
        raise UsageError(f"{target!r} is not flagged constant in the model")
    curve = fit_vcmoe(spec, data, config, fixed)
    return curve.constants[target], curve
