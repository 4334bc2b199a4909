import functools
import logging
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from vcmoe.base.errors import NonPositiveBandwidth, QuadratureFailure, UsageError

logger = logging.getLogger(__name__)

QUAD_TOL = 1e-10
GAUSS_LEGENDRE_NODES = 64


@dataclass(frozen=True)
class KernelConstants:
    """
    Quadrature constants of a kernel.

    Attributes:
        v2: second moment, int u^2 K(u) du
        tau: int K(u)^2 du
        k0: K(0)
        deriv_sq_integral: int K'(u)^2 du
        r_K: [k0 - 0.5 tau] / conv_norm, the GLRT normalizing constant
        conv_norm: int [K(u) - 0.5 (K*K)(u)]^2 du
    """
    v2: float
    tau: float
    k0: float
    deriv_sq_integral: float
    r_K: float
    conv_norm: float

    def as_dict(self):
        return dict(v2=self.v2, tau=self.tau, k0=self.k0, deriv_sq_integral=self.deriv_sq_integral,
                    r_K=self.r_K, conv_norm=self.conv_norm)


class Kernel(object):
    """
    The base class for symmetric, compactly supported smoothing kernels.

    Subclasses define `family`, `support` (the half-width A) and the pointwise
    `_evaluate` / `_derivative` hooks. Closed forms for the constants may be
    provided by overriding `_closed_form`; anything missing falls back to
    adaptive quadrature.
    """

    family = None
    support = 1.0

    def _evaluate(self, t):
        raise NotImplementedError

    def _derivative(self, t):
        raise NotImplementedError

    def _closed_form(self):
        return {}

    def eval(self, t):
        """K(t); zero outside [-A, A]. Accepts scalars or arrays."""
        t = np.asarray(t, dtype=float)
        out = np.where(np.abs(t) <= self.support, self._evaluate(t), 0.0)
        return float(out) if out.ndim == 0 else out

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        out = np.where(np.abs(t) < self.support, self._derivative(t), 0.0)
        return float(out) if out.ndim == 0 else out

    def scaled_weight(self, t, h):
        """K_h(t) = K(t/h)/h."""
        if not h > 0:
            raise NonPositiveBandwidth(h)
        return self.eval(np.asarray(t, dtype=float) / h) / h

    def boundary_value(self):
        """K(A), which selects the form of the sup-deviation centering constant."""
        return float(self._evaluate(np.asarray(self.support)))

    def convolution(self, u):
        """(K*K)(u) = int K(t) K(u - t) dt by Gauss-Legendre on the overlap of both supports."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        nodes, weights = _gauss_legendre(GAUSS_LEGENDRE_NODES)
        A = self.support
        lo = np.maximum(-A, u - A)
        hi = np.minimum(A, u + A)
        out = np.zeros_like(u)
        active = hi > lo
        if np.any(active):
            half = 0.5 * (hi[active] - lo[active])
            mid = 0.5 * (hi[active] + lo[active])
            t = mid[:, None] + half[:, None] * nodes[None, :]
            vals = self.eval(t) * self.eval(u[active][:, None] - t)
            out[active] = half * (vals @ weights)
        return out

    def quad(self, func, lo=None, hi=None):
        """Adaptive quadrature with the package tolerance; breakpoints at 0 and +-A."""
        A = self.support
        lo = -A if lo is None else lo
        hi = A if hi is None else hi
        points = [p for p in (-A, 0.0, A) if lo < p < hi]
        value, abserr = integrate.quad(func, lo, hi, epsabs=QUAD_TOL, epsrel=0.0, points=points or None, limit=200)
        if not np.isfinite(value) or abserr > QUAD_TOL:
            raise QuadratureFailure(f"quadrature error estimate {abserr:.3g} exceeds {QUAD_TOL:g}")
        return value

    def numeric_constants(self):
        """Every constant from quadrature alone; the cross-check for closed forms."""
        v2 = self.quad(lambda t: t * t * self.eval(t))
        tau = self.quad(lambda t: self.eval(t) ** 2)
        deriv_sq = self.quad(lambda t: self.derivative(t) ** 2)
        return dict(v2=v2, tau=tau, k0=self.eval(0.0), deriv_sq_integral=deriv_sq)

    def constants(self):
        return _constants(self)

    def __eq__(self, other):
        return type(self) is type(other) and self.support == other.support

    def __hash__(self):
        return hash((type(self).__name__, self.support))

    def __repr__(self):
        return f"{type(self).__name__}(support={self.support})"


class Epanechnikov(Kernel):
    """K(t) = 0.75 (1 - t^2)_+."""

    family = 'epanechnikov'
    support = 1.0

    def _evaluate(self, t):
        return 0.75 * (1.0 - t * t)

    def _derivative(self, t):
        return -1.5 * t

    def _closed_form(self):
        return dict(v2=0.2, tau=0.6, k0=0.75, deriv_sq_integral=1.5)


KERNELS = {
    Epanechnikov.family: Epanechnikov,
}


def get_kernel(family='epanechnikov'):
    try:
        return KERNELS[family.lower()]()
    except KeyError:
        raise UsageError(f"unknown kernel family {family!r}; available: {sorted(KERNELS)}") from None


@functools.lru_cache(maxsize=None)
def _gauss_legendre(n):
    return np.polynomial.legendre.leggauss(n)


@functools.lru_cache(maxsize=None)
def _constants(kernel):
    values = kernel._closed_form()
    if len(values) < 4:
        numeric = kernel.numeric_constants()
        values = {**numeric, **values}
    A = kernel.support

    def excess(u):
        return (kernel.eval(u) - 0.5 * kernel.convolution(u)[0]) ** 2

    conv_norm = kernel.quad(excess, -2 * A, 2 * A)
    r_K = (values['k0'] - 0.5 * values['tau']) / conv_norm
    constants = KernelConstants(v2=values['v2'], tau=values['tau'], k0=values['k0'],
                                deriv_sq_integral=values['deriv_sq_integral'], r_K=r_K, conv_norm=conv_norm)
    logger.debug("Kernel constants for %r: %s", kernel, constants)
    return constants
