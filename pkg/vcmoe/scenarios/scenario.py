import logging

import numpy as np

from vcmoe.base.errors import UnknownCoefficient, UsageError
from vcmoe.base.model import GAUSSIAN, ModelSpec, sample_mixture
from vcmoe.base.utilities import SIMULATION_STREAM, stream_rng
from vcmoe.estimation.data import Dataset

logger = logging.getLogger(__name__)


class Scenario(object):
    """
    The base class for simulation designs.

    A scenario fixes the model structure and closed-form coefficient functions; data are
    u ~ U(0, 1), X = [1, N(0, 1)], Z = [1, N(0, 1)], a class drawn from the gate and a
    response from that class's expert. Dispersions are tabulated as delta, not log delta.

    Subclasses define `n_components`, `expert` and the `coefficient_functions` hook.
    """

    n_components = 2
    expert = GAUSSIAN
    trials = None
    p_x = 2
    p_z = 2

    def __init__(self, n=500, beta=None):
        """
        Parameters:
            n: default sample size
            beta: optional constants replacing the gating functions, one per gating
                coefficient in coefficient order
        """
        if n < 1:
            raise UsageError(f"sample size must be at least 1, got {n}")
        self.n = int(n)
        self.id = type(self).__name__
        self.constant_beta = None if beta is None else tuple(float(b) for b in beta)
        spec = self.model_spec()
        n_beta = spec.n_gates * spec.p_x
        if self.constant_beta is not None and len(self.constant_beta) != n_beta:
            raise UsageError(f"beta needs {n_beta} values, got {len(self.constant_beta)}")

    def model_spec(self):
        return ModelSpec(self.n_components, self.p_x, self.p_z, expert=self.expert, trials=self.trials)

    def coefficient_functions(self):
        """{coefficient name: callable u -> value} for every coefficient of model_spec()."""
        raise NotImplementedError

    def sample_index(self, rng, n):
        return rng.uniform(0.0, 1.0, n)

    def truth(self):
        functions = dict(self.coefficient_functions())
        if self.constant_beta is not None:
            names = [name for name in self.model_spec().coefficient_names if name.startswith('beta')]
            for name, value in zip(names, self.constant_beta):
                functions[name] = _constant(value)
        return functions

    @property
    def constant_coefficients(self):
        """Coefficients that are constant in this design."""
        if self.constant_beta is None:
            return []
        return [name for name in self.model_spec().coefficient_names if name.startswith('beta')]

    def coefficient_truth(self, name, u):
        functions = self.truth()
        if name not in functions:
            raise UnknownCoefficient(name, tuple(functions))
        value = np.asarray(functions[name](np.asarray(u, dtype=float)), dtype=float)
        value = np.broadcast_to(value, np.shape(u)).copy()
        return float(value) if value.ndim == 0 else value

    def truth_table(self, u, natural=True):
        """(len(u), P) true coefficients in coefficient order; log delta when natural is False."""
        spec = self.model_spec()
        u = np.atleast_1d(np.asarray(u, dtype=float))
        table = np.column_stack([np.broadcast_to(self.coefficient_truth(name, u), u.shape)
                                 for name in spec.coefficient_names])
        if not natural and spec.has_dispersion:
            table[:, -spec.n_components:] = np.log(table[:, -spec.n_components:])
        return table

    def sample(self, n, rng):
        spec = self.model_spec()
        u = self.sample_index(rng, n)
        X = np.column_stack([np.ones(n), rng.standard_normal(n)])
        Z = np.column_stack([np.ones(n), rng.standard_normal(n)])
        labels, y = sample_mixture(spec, self.truth_table(u, natural=False), X, Z, rng)
        return Dataset(u, X, Z, y, labels + 1)

    def generate(self, n=None, seed=0):
        """A dataset of size n (default self.n); bit-identical for a given seed."""
        n = self.n if n is None else int(n)
        if n < 1:
            raise UsageError(f"sample size must be at least 1, got {n}")
        return self.sample(n, stream_rng(seed, SIMULATION_STREAM))

    def __repr__(self):
        return f"{type(self).__name__}(n={self.n}, beta={self.constant_beta})"


def _constant(value):
    return lambda u: np.full(np.shape(u), value)
