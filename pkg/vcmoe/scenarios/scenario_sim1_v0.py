import numpy as np

from vcmoe.base.model import GAUSSIAN
from vcmoe.scenarios.scenario import Scenario


class GaussianTwoExperts(Scenario):
    """
    Two Gaussian experts with logistic gating; every coefficient varies with u.
    """

    n_components = 2
    expert = GAUSSIAN

    def coefficient_functions(self):
        cos = lambda u: np.cos(2 * np.pi * u)
        sin = lambda u: np.sin(2 * np.pi * u)
        return {
            'beta_0': lambda u: -0.4 + u,
            'beta_1': lambda u: 0.9 - 1.2 * u,
            'alpha_1_0': lambda u: -0.5 + 0.6 * cos(u),
            'alpha_1_1': lambda u: 1.0 + 0.6 * sin(u),
            'alpha_2_0': lambda u: 0.5 + 0.6 * cos(u),
            'alpha_2_1': lambda u: 2.0 + 0.6 * sin(u),
            'delta_1': lambda u: 0.85 + 0.35 * cos(u),
            'delta_2': lambda u: 1.85 + 0.35 * cos(u),
        }
