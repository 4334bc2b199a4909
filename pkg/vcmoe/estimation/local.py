"""
Kernel-weighted local-linear objective at a single index point.

Around a point u every coefficient is expanded as a + b (U_i - u). The expected
complete-data objective Q separates into one block for the gate and one block per
expert, so each block is maximized on its own. Coefficients listed in `fixed` are held
at their value with zero slope and carry no free parameters.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import expit

from vcmoe.base.errors import NoEffectiveSamples, SingularHessian
from vcmoe.base.kernel import get_kernel
from vcmoe.base.model import GAUSSIAN, expert_log_densities, gate_log_probs

logger = logging.getLogger(__name__)

RANK_TOL = 1e-10
MIN_DAMPING = 1e-6
DAMPING_GROWTH = 10.0
STALL_TOL = 1e-14


class Block(object):
    """
    The base class for separable pieces of the local objective.

    Attributes:
        positions: list of (coefficient index, is_slope) for each local parameter
    """

    def __init__(self, problem):
        self.problem = problem
        self.positions = []

    @property
    def size(self):
        return len(self.positions)

    def params(self, values, slopes):
        return np.array([slopes[k] if is_slope else values[k] for k, is_slope in self.positions])

    def scatter(self, theta, values, slopes):
        for (k, is_slope), v in zip(self.positions, theta):
            if is_slope:
                slopes[k] = v
            else:
                values[k] = v

    def evaluate(self, theta):
        """(value, gradient, Hessian) of this block's share of Q."""
        raise NotImplementedError

    def gram(self):
        raise NotImplementedError

    def check_rank(self):
        gram = self.gram()
        if gram.size == 0:
            return
        eig = linalg.eigvalsh(gram)
        if not eig[-1] > 0 or eig[0] <= RANK_TOL * eig[-1]:
            raise SingularHessian(f"{self.name} design is rank deficient at u={self.problem.u:.4g} "
                                  f"(eigenvalues {eig[0]:.3g} .. {eig[-1]:.3g})")


class GateBlock(Block):
    name = 'gate'

    def __init__(self, problem):
        super().__init__(problem)
        spec, p = problem.spec, problem
        free = [(k, c, j) for k, (kind, c, j) in p.described if kind == 'beta' and k not in p.fixed_index]
        self.positions = [(k, False) for k, _, _ in free] + [(k, True) for k, _, _ in free]
        js = np.array([j for _, _, j in free], dtype=int)
        cs = np.array([c for _, c, _ in free], dtype=int)
        self.D = np.hstack([p.X[:, js], p.X[:, js] * p.t[:, None]])
        self.comps = np.concatenate([cs, cs])
        self.onehot = (np.arange(spec.n_gates)[None, :] == self.comps[:, None]).astype(float)
        self.same = self.comps[:, None] == self.comps[None, :]
        self.offset = np.zeros((p.n, spec.n_gates))
        for k, (kind, c, j) in p.described:
            if kind == 'beta' and k in p.fixed_index:
                self.offset[:, c] += p.fixed_index[k] * p.X[:, j]

    def log_pi(self, theta):
        eta = self.offset + (self.D * theta) @ self.onehot
        eta = np.column_stack([eta, np.zeros(self.problem.n)])
        return gate_log_probs(self.problem.spec, eta)

    def evaluate(self, theta):
        p = self.problem
        log_pi = self.log_pi(theta)
        pi = np.exp(log_pi)
        s = p.gamma.sum(axis=1)
        value = float(np.sum(p.w[:, None] * p.gamma * log_pi))
        P = pi[:, self.comps]
        R = p.gamma[:, self.comps] - s[:, None] * P
        grad = np.sum(p.w[:, None] * R * self.D, axis=0)
        ws = p.w * s
        DP = self.D * P
        hess = -((ws[:, None] * DP).T @ self.D * self.same - (ws[:, None] * DP).T @ DP)
        return value, grad, hess

    def scores(self, theta):
        """Complete-data scores (n, C, m): d log pi_ic / d theta."""
        pi = np.exp(self.log_pi(theta))
        C = self.problem.spec.n_components
        indicator = (np.arange(C)[:, None] == self.comps[None, :]).astype(float)
        return (indicator[None, :, :] - pi[:, self.comps][:, None, :]) * self.D[:, None, :]

    def gram(self):
        return (self.D * self.problem.w[:, None]).T @ self.D


class ExpertBlock(Block):
    """Mean coefficients (and log dispersion, for Gaussian experts) of one component."""

    def __init__(self, problem, c):
        super().__init__(problem)
        self.c = c
        self.name = f"expert {c + 1}"
        spec, p = problem.spec, problem
        free = [(k, j) for k, (kind, cc, j) in p.described if kind == 'alpha' and cc == c and k not in p.fixed_index]
        self.positions = [(k, False) for k, _ in free] + [(k, True) for k, _ in free]
        js = np.array([j for _, j in free], dtype=int)
        self.n_mean = 2 * len(free)
        self.E = np.hstack([p.Z[:, js], p.Z[:, js] * p.t[:, None]])
        self.mean_offset = np.zeros(p.n)
        self.log_delta_offset = 0.0
        self.dispersion_free = False
        for k, (kind, cc, j) in p.described:
            if cc != c:
                continue
            if kind == 'alpha' and k in p.fixed_index:
                self.mean_offset += p.fixed_index[k] * p.Z[:, j]
            elif kind == 'delta':
                if k in p.fixed_index:
                    self.log_delta_offset = p.fixed_index[k]
                else:
                    self.dispersion_free = True
                    self.positions += [(k, False), (k, True)]
        self.G = np.column_stack([np.ones(p.n), p.t]) if self.dispersion_free else np.zeros((p.n, 0))

    def _linear(self, theta):
        mu = self.mean_offset + self.E @ theta[:self.n_mean]
        log_delta = self.log_delta_offset + self.G @ theta[self.n_mean:]
        return mu, log_delta

    def log_phi(self, theta):
        mu, log_delta = self._linear(theta)
        return expert_log_densities(self.problem.spec, mu[:, None], np.asarray(log_delta)[:, None] * np.ones((self.problem.n, 1)),
                                    self.problem.y)[:, 0]

    def log_delta_at_node(self, theta):
        """log delta at U = u (the local intercept)."""
        if self.dispersion_free:
            return theta[self.n_mean]
        return self.log_delta_offset

    def scores(self, theta):
        """Complete-data scores (n, m): d log phi_ic / d theta."""
        p = self.problem
        mu, log_delta = self._linear(theta)
        r = p.y - mu
        if p.spec.expert == GAUSSIAN:
            inv = np.exp(-2.0 * log_delta)
            mean_part = (r * inv)[:, None] * self.E
            disp_part = (r * r * inv - 1.0)[:, None] * self.G
            return np.hstack([mean_part, disp_part])
        return (p.y - p.spec.trials * expit(mu))[:, None] * self.E

    def evaluate(self, theta):
        p = self.problem
        v = p.w * p.gamma[:, self.c]
        value = float(v @ self.log_phi(theta))
        grad = v @ self.scores(theta)
        mu, log_delta = self._linear(theta)
        if p.spec.expert == GAUSSIAN:
            r = p.y - mu
            inv = np.exp(-2.0 * log_delta)
            h_aa = -(self.E * (v * inv)[:, None]).T @ self.E
            h_ad = -2.0 * (self.E * (v * r * inv)[:, None]).T @ self.G
            h_dd = -2.0 * (self.G * (v * r * r * inv)[:, None]).T @ self.G
            hess = np.block([[h_aa, h_ad], [h_ad.T, h_dd]])
        else:
            prob = expit(mu)
            hess = -(self.E * (v * p.spec.trials * prob * (1.0 - prob))[:, None]).T @ self.E
        return value, grad, hess

    def gram(self):
        v = self.problem.w * self.problem.gamma[:, self.c]
        return (self.E * v[:, None]).T @ self.E


class LocalProblem(object):
    """
    Local objective Q(theta(u) | gamma) at index point u.

    Arguments:
        spec: ModelSpec
        data: Dataset
        gamma: (n, C) responsibilities
        u: index point
        h: bandwidth
        kernel: Kernel
        fixed: {coefficient name: value} held constant with zero slope
    """

    def __init__(self, spec, data, gamma, u, h, kernel, fixed=None):
        t = data.u - u
        w = kernel.scaled_weight(t, h)
        keep = w > 0
        if not np.any(keep):
            raise NoEffectiveSamples(u, h)
        self.spec = spec
        self.u = float(u)
        self.h = float(h)
        self.kernel = kernel
        self.rows = np.flatnonzero(keep)
        self.w = w[keep]
        self.t = t[keep]
        self.X = data.X[keep]
        self.Z = data.Z[keep]
        self.y = data.y[keep]
        self.gamma = np.asarray(gamma, dtype=float)[keep]
        self.fixed = dict(fixed or {})
        self.fixed_index = {spec.index(name): float(v) for name, v in self.fixed.items()}
        self.described = [(k, spec.describe(name)) for k, name in enumerate(spec.coefficient_names)]
        self.blocks = [GateBlock(self)] + [ExpertBlock(self, c) for c in range(spec.n_components)]
        offsets = np.cumsum([0] + [b.size for b in self.blocks])
        self.slices = [slice(offsets[i], offsets[i + 1]) for i in range(len(self.blocks))]

    @property
    def n(self):
        return self.w.shape[0]

    @property
    def size(self):
        return self.slices[-1].stop

    def params(self, values, slopes):
        """Free local parameters from full coefficient value/slope vectors."""
        return np.concatenate([b.params(values, slopes) for b in self.blocks])

    def coefficients(self, params, values=None, slopes=None):
        """Full coefficient value/slope vectors from free parameters; fixed entries take their constants."""
        P = self.spec.n_coefficients
        values = np.zeros(P) if values is None else np.array(values, dtype=float)
        slopes = np.zeros(P) if slopes is None else np.array(slopes, dtype=float)
        for b, sl in zip(self.blocks, self.slices):
            b.scatter(params[sl], values, slopes)
        for k, v in self.fixed_index.items():
            values[k] = v
            slopes[k] = 0.0
        return values, slopes

    def value_grad_hess(self, params):
        value = 0.0
        grads, hessians = [], []
        for b, sl in zip(self.blocks, self.slices):
            if b.size == 0:
                continue
            v, g, H = b.evaluate(params[sl])
            value += v
            grads.append(g)
            hessians.append(H)
        if not grads:
            return value, np.zeros(0), np.zeros((0, 0))
        return value, np.concatenate(grads), linalg.block_diag(*hessians)

    def kernel_mass(self, c):
        """Kernel-count of component c: sum_i gamma_ic K((U_i - u) / h)."""
        return float(np.sum(self.w * self.h * self.gamma[:, c]))

    def component_log_terms(self, params):
        """(log pi, log phi), each (n, C), under the local-linear parameters."""
        gate = self.blocks[0]
        log_pi = gate.log_pi(params[self.slices[0]])
        log_phi = np.column_stack([b.log_phi(params[sl]) for b, sl in zip(self.blocks[1:], self.slices[1:])])
        return log_pi, log_phi

    def component_scores(self, params):
        """Complete-data scores s_ic of log(pi_ic phi_ic), shape (n, C, size)."""
        S = np.zeros((self.n, self.spec.n_components, self.size))
        S[:, :, self.slices[0]] = self.blocks[0].scores(params[self.slices[0]])
        for c, (b, sl) in enumerate(zip(self.blocks[1:], self.slices[1:])):
            S[:, c, sl] = b.scores(params[sl])
        return S


@dataclass
class NewtonResult:
    x: np.ndarray
    value: float
    grad: np.ndarray
    n_iter: int
    converged: bool
    damping_path: list = field(default_factory=list)


def _grow(lam):
    return MIN_DAMPING if lam == 0.0 else lam * DAMPING_GROWTH


def newton_maximize(func, x0, max_iter=50, tol=1e-8, max_damping=1e6, label=''):
    """
    Damped Newton ascent with a Levenberg shift.

    Each iteration solves (-H + lam I) step = g, growing lam by DAMPING_GROWTH until the
    shifted matrix factors and the step does not decrease the objective. Steps are only
    ever accepted when they ascend, so the returned value is at least func(x0).
    """
    x = np.array(x0, dtype=float)
    value, grad, hess = func(x)
    eye = np.eye(x.size)
    damping = 0.0
    path = []
    converged = False
    n_iter = 0
    while n_iter < max_iter:
        if x.size == 0 or np.max(np.abs(grad)) < tol:
            converged = True
            break
        n_iter += 1
        lam = damping
        factored = False
        accepted = None
        while lam <= max_damping:
            try:
                factor = linalg.cho_factor(-hess + lam * eye)
            except linalg.LinAlgError:
                lam = _grow(lam)
                continue
            factored = True
            step = linalg.cho_solve(factor, grad)
            trial = func(x + step)
            if np.isfinite(trial[0]) and trial[0] >= value:
                accepted = (x + step, trial)
                break
            lam = _grow(lam)
        path.append(lam)
        if accepted is None:
            if not factored:
                raise SingularHessian(f"{label}: Hessian not definite after damping up to {max_damping:g}")
            logger.debug("%s: no ascent direction at |g|=%.3g after damping %s", label, np.max(np.abs(grad)), path)
            break
        gain = accepted[1][0] - value
        x, (value, grad, hess) = accepted
        damping = lam / DAMPING_GROWTH if lam > MIN_DAMPING else 0.0
        if gain <= STALL_TOL * max(1.0, abs(value)):
            converged = np.max(np.abs(grad)) < tol
            break
    else:
        converged = x.size == 0 or np.max(np.abs(grad)) < tol
    if path and any(lam > 0 for lam in path):
        logger.debug("%s: damping path %s", label, ["%.0e" % lam for lam in path])
    return NewtonResult(x, value, grad, n_iter, converged, path)


def local_objective_grad_hess(spec, theta, gamma, data, u, h, kernel=None, fixed=None):
    """
    Value, gradient and Hessian of Q at u over the free local parameters.

    Parameters:
        theta: ThetaPoint whose values and slopes give the (a, b) expansion point
        gamma: Responsibilities or (n, C) array
        fixed: coefficient values held constant; by default the coefficients in
            spec.constant, held at their value in theta
    """
    kernel = kernel or get_kernel()
    values, slopes = theta.values(spec), theta.slopes(spec)
    if fixed is None:
        fixed = {name: values[spec.index(name)] for name in spec.constant}
    gamma = getattr(gamma, 'gamma', gamma)
    problem = LocalProblem(spec, data, gamma, u, h, kernel, fixed)
    return problem.value_grad_hess(problem.params(values, slopes))
