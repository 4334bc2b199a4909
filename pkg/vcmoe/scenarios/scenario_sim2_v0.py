import numpy as np

from vcmoe.base.model import BINOMIAL
from vcmoe.scenarios.scenario import Scenario


class BinomialTwoExperts(Scenario):
    """
    Two binomial (logit link) experts with logistic gating and a fixed number of trials.
    """

    n_components = 2
    expert = BINOMIAL

    def __init__(self, n=500, trials=100, beta=None):
        self.trials = int(trials)
        super().__init__(n, beta)

    def coefficient_functions(self):
        cos = lambda u: np.cos(2 * np.pi * u)
        sin = lambda u: np.sin(2 * np.pi * u)
        return {
            'beta_0': lambda u: -0.4 + u,
            'beta_1': lambda u: 0.9 - 1.2 * u,
            'alpha_1_0': lambda u: -0.5 + 0.1 * cos(u),
            'alpha_1_1': lambda u: 1.0 + 0.1 * sin(u),
            'alpha_2_0': lambda u: 0.1 * cos(u),
            'alpha_2_1': lambda u: 1.5 + 0.1 * sin(u),
        }
