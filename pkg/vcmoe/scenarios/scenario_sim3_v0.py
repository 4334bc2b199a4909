import numpy as np

from vcmoe.base.model import GAUSSIAN
from vcmoe.scenarios.scenario import Scenario


class SoftmaxThreeExperts(Scenario):
    """
    Three Gaussian experts with softmax gating (reference class 3).

    The index takes `lattice` evenly spaced values in [0, 1]. All three dispersions share
    one true function but are estimated separately.
    """

    n_components = 3
    expert = GAUSSIAN

    def __init__(self, n=1000, lattice=20, beta=None):
        self.lattice = int(lattice)
        super().__init__(n, beta)

    def sample_index(self, rng, n):
        return rng.choice(np.linspace(0.0, 1.0, self.lattice), size=n)

    def coefficient_functions(self):
        cos = lambda u: np.cos(2 * np.pi * u)
        sin = lambda u: np.sin(2 * np.pi * u)
        delta = lambda u: np.exp(0.35 * u ** 2)
        return {
            'beta_1_0': lambda u: 0.4 - 1.3 * u,
            'beta_1_1': lambda u: 0.1 + 1.2 * cos(u),
            'beta_2_0': lambda u: 0.9 - 1.2 * u,
            'beta_2_1': lambda u: -0.5 + 0.7 * cos(u),
            'alpha_1_0': lambda u: -0.5 + 0.6 * cos(u),
            'alpha_1_1': lambda u: 1.0 + 0.6 * sin(u),
            'alpha_2_0': lambda u: 0.5 + 0.6 * cos(u),
            'alpha_2_1': lambda u: 1.5 + 0.6 * sin(u),
            'alpha_3_0': lambda u: 1.0 + 0.6 * cos(u),
            'alpha_3_1': lambda u: 2.0 + 0.6 * sin(u),
            'delta_1': delta,
            'delta_2': delta,
            'delta_3': delta,
        }
