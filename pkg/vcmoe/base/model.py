import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats
from scipy.special import expit, gammaln, log_expit, logsumexp

from vcmoe.base.errors import DimensionMismatch, InvalidResponse, UnknownCoefficient, UsageError

logger = logging.getLogger(__name__)

GAUSSIAN = 'gaussian'
BINOMIAL = 'binomial'
LOGISTIC = 'logistic'
SOFTMAX = 'softmax'


@dataclass(frozen=True)
class ModelSpec:
    """
    Structure of a varying-coefficient mixture of experts.

    Arguments:
        n_components: C, the number of experts
        p_x: dimension of the gating covariates x
        p_z: dimension of the expert covariates z
        expert: 'gaussian' (identity link, delta is the standard deviation) or 'binomial' (logit link)
        trials: number of binomial trials, binomial experts only
        gating: 'logistic' (C=2 only) or 'softmax' (reference class C); defaults by C
        constant: names of coefficients held constant over u

    Coefficient names, in vector order:
        beta_{j} (C=2) or beta_{c}_{j} (C>=3, c=1..C-1), then alpha_{c}_{j} (c=1..C),
        then delta_{c} for Gaussian experts.
    """
    n_components: int
    p_x: int
    p_z: int
    expert: str = GAUSSIAN
    trials: int = None
    gating: str = None
    constant: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.n_components < 2:
            raise UsageError(f"a mixture needs at least 2 components, got {self.n_components}")
        if self.p_x < 1 or self.p_z < 1:
            raise UsageError("covariate dimensions p_x and p_z must be at least 1")
        if self.expert not in (GAUSSIAN, BINOMIAL):
            raise UsageError(f"unknown expert family {self.expert!r}")
        if self.expert == BINOMIAL:
            if self.trials is None or int(self.trials) != self.trials or self.trials < 1:
                raise UsageError(f"binomial experts need a positive integer number of trials, got {self.trials!r}")
            object.__setattr__(self, 'trials', int(self.trials))
        if self.gating is None:
            object.__setattr__(self, 'gating', LOGISTIC if self.n_components == 2 else SOFTMAX)
        if self.gating not in (LOGISTIC, SOFTMAX):
            raise UsageError(f"unknown gating form {self.gating!r}")
        if self.gating == LOGISTIC and self.n_components != 2:
            raise UsageError("logistic gating requires exactly 2 components")
        constant = frozenset(self.constant)
        for name in constant:
            if name not in self.coefficient_names:
                raise UnknownCoefficient(name, self.coefficient_names)
        object.__setattr__(self, 'constant', constant)

    @property
    def n_gates(self):
        return self.n_components - 1

    @property
    def has_dispersion(self):
        return self.expert == GAUSSIAN

    @property
    def coefficient_names(self):
        return _coefficient_names(self.n_components, self.p_x, self.p_z, self.expert)

    @property
    def n_coefficients(self):
        return len(self.coefficient_names)

    @property
    def constant_mask(self):
        return np.array([name in self.constant for name in self.coefficient_names])

    def index(self, name):
        try:
            return self.coefficient_names.index(name)
        except ValueError:
            raise UnknownCoefficient(name, self.coefficient_names) from None

    def describe(self, name):
        """('beta', c, j), ('alpha', c, j) or ('delta', c, None), with 0-based c and j."""
        k = self.index(name)
        n_beta = self.n_gates * self.p_x
        n_alpha = self.n_components * self.p_z
        if k < n_beta:
            return 'beta', k // self.p_x, k % self.p_x
        k -= n_beta
        if k < n_alpha:
            return 'alpha', k // self.p_z, k % self.p_z
        return 'delta', k - n_alpha, None

    def with_constant(self, names):
        return replace(self, constant=frozenset(names))

    def free_parameter_count(self):
        """Local (value, slope) parameters per grid node."""
        return 2 * int(np.sum(~self.constant_mask))

    def as_dict(self):
        return dict(n_components=self.n_components, p_x=self.p_x, p_z=self.p_z, expert=self.expert,
                    trials=self.trials, gating=self.gating, constant=sorted(self.constant))

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d['constant'] = frozenset(d.get('constant', ()))
        return cls(**d)


def _coefficient_names(C, p_x, p_z, expert):
    names = []
    for c in range(C - 1):
        for j in range(p_x):
            names.append(f"beta_{j}" if C == 2 else f"beta_{c + 1}_{j}")
    for c in range(C):
        for j in range(p_z):
            names.append(f"alpha_{c + 1}_{j}")
    if expert == GAUSSIAN:
        for c in range(C):
            names.append(f"delta_{c + 1}")
    return tuple(names)


@dataclass
class ThetaPoint:
    """
    Coefficient values at one index point, plus their local slopes.

    beta: (C-1, p_x) gating coefficients
    alpha: (C, p_z) expert coefficients
    log_delta: (C,) log dispersions (zeros for binomial experts)
    *_slope: first derivatives in u with matching shapes
    """
    beta: np.ndarray
    alpha: np.ndarray
    log_delta: np.ndarray
    beta_slope: np.ndarray = None
    alpha_slope: np.ndarray = None
    log_delta_slope: np.ndarray = None

    def __post_init__(self):
        self.beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        self.alpha = np.atleast_2d(np.asarray(self.alpha, dtype=float))
        self.log_delta = np.atleast_1d(np.asarray(self.log_delta, dtype=float))
        if self.beta_slope is None:
            self.beta_slope = np.zeros_like(self.beta)
        if self.alpha_slope is None:
            self.alpha_slope = np.zeros_like(self.alpha)
        if self.log_delta_slope is None:
            self.log_delta_slope = np.zeros_like(self.log_delta)

    @property
    def delta(self):
        return np.exp(self.log_delta)

    @classmethod
    def from_vectors(cls, spec, values, slopes=None):
        """Split coefficient-ordered vectors into a ThetaPoint."""
        values = np.asarray(values, dtype=float)
        slopes = np.zeros_like(values) if slopes is None else np.asarray(slopes, dtype=float)
        parts = [_split(spec, v) for v in (values, slopes)]
        (b, a, d), (bs, as_, ds) = parts
        return cls(b, a, d, bs, as_, ds)

    def values(self, spec):
        return _join(spec, self.beta, self.alpha, self.log_delta)

    def slopes(self, spec):
        return _join(spec, self.beta_slope, self.alpha_slope, self.log_delta_slope)


def _split(spec, vec):
    C, p_x, p_z = spec.n_components, spec.p_x, spec.p_z
    n_beta = (C - 1) * p_x
    n_alpha = C * p_z
    beta = vec[:n_beta].reshape(C - 1, p_x)
    alpha = vec[n_beta:n_beta + n_alpha].reshape(C, p_z)
    if spec.has_dispersion:
        log_delta = vec[n_beta + n_alpha:n_beta + n_alpha + C].copy()
    else:
        log_delta = np.zeros(C)
    return beta.copy(), alpha.copy(), log_delta


def _join(spec, beta, alpha, log_delta):
    parts = [np.ravel(beta), np.ravel(alpha)]
    if spec.has_dispersion:
        parts.append(np.ravel(log_delta))
    return np.concatenate(parts)


def split_rows(spec, theta_rows):
    """
    Per-observation coefficient rows (n, P) to (beta (n, C-1, p_x), alpha (n, C, p_z), log_delta (n, C)).
    """
    theta_rows = np.atleast_2d(theta_rows)
    n = theta_rows.shape[0]
    C, p_x, p_z = spec.n_components, spec.p_x, spec.p_z
    n_beta = (C - 1) * p_x
    n_alpha = C * p_z
    beta = theta_rows[:, :n_beta].reshape(n, C - 1, p_x)
    alpha = theta_rows[:, n_beta:n_beta + n_alpha].reshape(n, C, p_z)
    if spec.has_dispersion:
        log_delta = theta_rows[:, n_beta + n_alpha:]
    else:
        log_delta = np.zeros((n, C))
    return beta, alpha, log_delta


# Gating

def gate_linear_predictor(beta, X):
    """
    eta (n, C) with the reference column C fixed at 0.

    beta is (C-1, p_x) shared by all rows or (n, C-1, p_x) per row.
    """
    X = np.atleast_2d(X)
    if beta.ndim == 2:
        eta = X @ beta.T
    else:
        eta = np.einsum('ij,icj->ic', X, beta)
    return np.column_stack([eta, np.zeros(X.shape[0])])


def gate_log_probs(spec, eta):
    """Log gate probabilities from linear predictors (max-subtracted log-sum-exp)."""
    if spec.gating == LOGISTIC:
        return np.column_stack([log_expit(eta[:, 0]), log_expit(-eta[:, 0])])
    return eta - logsumexp(eta, axis=1, keepdims=True)


def gate_probs(spec, theta, x):
    """
    Component probabilities pi_c(x; beta(u)).

    x may be a single covariate vector (returns length C) or an (n, p_x) matrix (returns (n, C)).
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != spec.p_x:
        raise DimensionMismatch(f"gating covariates have dimension {X.shape[1]}, expected {spec.p_x}")
    probs = np.exp(gate_log_probs(spec, gate_linear_predictor(theta.beta, X)))
    return probs[0] if single else probs


# Experts

def check_response(spec, y):
    y = np.asarray(y, dtype=float)
    if spec.expert == BINOMIAL:
        bad = (y < 0) | (y > spec.trials) | (y != np.round(y))
        if np.any(bad):
            first = np.flatnonzero(np.atleast_1d(bad))[0]
            raise InvalidResponse(f"binomial response {np.atleast_1d(y)[first]!r} is not an integer in [0, {spec.trials}]")
    return y


def expert_log_densities(spec, mean_lin, log_delta, y):
    """
    log phi(y_i | eta_ic, delta_ic) for all rows and components.

    mean_lin: (n, C) linear predictors z_i^T alpha_c
    log_delta: (n, C) log dispersions (ignored for binomial experts)
    """
    y = np.asarray(y, dtype=float)[:, None]
    if spec.expert == GAUSSIAN:
        return stats.norm.logpdf(y, loc=mean_lin, scale=np.exp(log_delta))
    m = spec.trials
    log_binom = gammaln(m + 1) - gammaln(y + 1) - gammaln(m - y + 1)
    return log_binom + y * log_expit(mean_lin) + (m - y) * log_expit(-mean_lin)


def expert_log_density(spec, c, theta, z, y):
    """log phi(y | w(z^T alpha_c), delta_c) for one component c (0-based)."""
    z = np.asarray(z, dtype=float)
    if z.shape != (spec.p_z,):
        raise DimensionMismatch(f"expert covariates have shape {z.shape}, expected ({spec.p_z},)")
    if not 0 <= c < spec.n_components:
        raise UsageError(f"component index {c} out of range for C={spec.n_components}")
    y = check_response(spec, np.atleast_1d(y))
    mean_lin = np.atleast_2d(theta.alpha[c] @ z)
    log_delta = np.atleast_2d(theta.log_delta[c])
    return float(expert_log_densities(spec, mean_lin, log_delta, y)[0, 0])


# Mixture

def component_log_terms(spec, theta_rows, X, Z, y):
    """
    (log pi_ic, log phi_ic), each (n, C), for per-observation coefficient rows (n, P).

    A single row is shared by every observation.
    """
    beta, alpha, log_delta = split_rows(spec, theta_rows)
    if beta.shape[0] == 1 and X.shape[0] > 1:
        beta, alpha, log_delta = beta[0], alpha[0], np.broadcast_to(log_delta, (X.shape[0], spec.n_components))
        mean_lin = Z @ alpha.T
    else:
        mean_lin = np.einsum('ij,icj->ic', Z, alpha)
    log_pi = gate_log_probs(spec, gate_linear_predictor(beta, X))
    return log_pi, expert_log_densities(spec, mean_lin, log_delta, y)


def joint_log_densities(spec, theta_rows, X, Z, y):
    """log pi_ic + log phi_ic for per-observation coefficient rows (n, P)."""
    log_pi, log_phi = component_log_terms(spec, theta_rows, X, Z, y)
    return log_pi + log_phi


def mixture_log_density(spec, theta, x, z, y):
    """log sum_c pi_c(x; beta_c) phi(y | eta_c, delta_c), via log-sum-exp."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if x.shape != (spec.p_x,):
        raise DimensionMismatch(f"gating covariates have shape {x.shape}, expected ({spec.p_x},)")
    if z.shape != (spec.p_z,):
        raise DimensionMismatch(f"expert covariates have shape {z.shape}, expected ({spec.p_z},)")
    y = check_response(spec, np.atleast_1d(y))
    joint = joint_log_densities(spec, theta.values(spec)[None, :], x[None, :], z[None, :], y)
    return float(logsumexp(joint, axis=1)[0])


def mixture_log_densities(spec, theta_rows, X, Z, y):
    """Row-wise log mixture density for per-observation coefficient rows."""
    return logsumexp(joint_log_densities(spec, theta_rows, X, Z, y), axis=1)


@dataclass
class Responsibilities:
    """Posterior component probabilities gamma (n, C); rows sum to one."""
    gamma: np.ndarray

    def __post_init__(self):
        self.gamma = np.atleast_2d(np.asarray(self.gamma, dtype=float))

    @property
    def n(self):
        return self.gamma.shape[0]

    @property
    def n_components(self):
        return self.gamma.shape[1]

    def drop(self, i):
        return Responsibilities(np.delete(self.gamma, i, axis=0))

    def summary(self):
        hard = np.argmax(self.gamma, axis=1)
        return dict(mean=self.gamma.mean(axis=0).tolist(),
                    hard_counts=np.bincount(hard, minlength=self.n_components).tolist(),
                    mean_max=float(self.gamma.max(axis=1).mean()))


def posterior(joint, log_pi=None):
    """
    Normalize joint log densities (n, C) into responsibilities.

    Rows whose component densities all underflow fall back to the gate probabilities
    exp(log_pi), or to uniform weights when log_pi is not given.
    """
    norm = logsumexp(joint, axis=1, keepdims=True)
    gamma = np.exp(joint - norm)
    dead = ~np.isfinite(norm[:, 0])
    if np.any(dead):
        logger.debug("%d rows with all component densities underflowing", int(dead.sum()))
        fallback = np.exp(log_pi[dead]) if log_pi is not None else 1.0 / joint.shape[1]
        gamma[dead] = fallback
    gamma /= gamma.sum(axis=1, keepdims=True)
    return gamma


def sample_mixture(spec, theta_rows, X, Z, rng):
    """Draw (labels, y) from the mixture with per-observation coefficient rows; labels are 0-based."""
    beta, alpha, log_delta = split_rows(spec, theta_rows)
    n = X.shape[0]
    probs = np.exp(gate_log_probs(spec, gate_linear_predictor(beta, X)))
    cum = np.cumsum(probs, axis=1)
    labels = np.minimum((rng.random(n)[:, None] > cum).sum(axis=1), spec.n_components - 1)
    mean_lin = np.einsum('ij,ij->i', Z, alpha[np.arange(n), labels])
    if spec.expert == GAUSSIAN:
        y = mean_lin + np.exp(log_delta[np.arange(n), labels]) * rng.standard_normal(n)
    else:
        y = rng.binomial(spec.trials, expit(mean_lin)).astype(float)
    return labels, y
