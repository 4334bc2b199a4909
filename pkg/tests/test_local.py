import numpy as np
import pytest
from numpy import isclose

from vcmoe.base.errors import NoEffectiveSamples, SingularHessian
from vcmoe.base.kernel import get_kernel
from vcmoe.base.model import ModelSpec, ThetaPoint
from vcmoe.estimation.data import Dataset
from vcmoe.estimation.em import FitConfig, m_step
from vcmoe.estimation.local import LocalProblem, local_objective_grad_hess, newton_maximize
from vcmoe.scenarios import make


def _problem(scenario_id, n, fixed=None, seed=3):
    scenario = make(scenario_id)
    data = scenario.generate(n=n, seed=seed)
    spec = scenario.model_spec()
    gamma = np.random.default_rng(seed).dirichlet(np.ones(spec.n_components), size=n)
    return LocalProblem(spec, data, gamma, 0.4, 0.3, get_kernel(), fixed)


def _check_derivatives(problem, seed=0):
    rng = np.random.default_rng(seed)
    x = 0.2 * rng.standard_normal(problem.size)
    value, grad, hess = problem.value_grad_hess(x)
    eps = 1e-5
    fd_grad = np.zeros_like(grad)
    fd_hess = np.zeros_like(hess)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = eps
        fd_grad[j] = (problem.value_grad_hess(x + e)[0] - problem.value_grad_hess(x - e)[0]) / (2 * eps)
        fd_hess[:, j] = (problem.value_grad_hess(x + e)[1] - problem.value_grad_hess(x - e)[1]) / (2 * eps)
    scale = max(1.0, np.max(np.abs(grad)))
    assert np.max(np.abs(fd_grad - grad)) / scale < 1e-5, 'analytic gradient disagrees with finite differences'
    scale = max(1.0, np.max(np.abs(hess)))
    assert np.max(np.abs(fd_hess - hess)) / scale < 1e-5, 'analytic Hessian disagrees with finite differences'
    assert np.allclose(hess, hess.T)


def test_gaussian_derivatives():
    _check_derivatives(_problem('Sim1', 300))


def test_binomial_derivatives():
    _check_derivatives(_problem('Sim2', 200))


def test_softmax_derivatives():
    _check_derivatives(_problem('Sim3', 300))


def test_fixed_coefficients_carry_no_parameters():
    problem = _problem('Sim1', 300, fixed={'delta_1': 0.1, 'alpha_2_1': 1.5})
    assert problem.size == 12
    _check_derivatives(problem)
    values, slopes = problem.coefficients(np.zeros(problem.size))
    spec = problem.spec
    assert values[spec.index('delta_1')] == 0.1
    assert values[spec.index('alpha_2_1')] == 1.5
    assert slopes[spec.index('alpha_2_1')] == 0.0


def test_params_round_trip():
    problem = _problem('Sim3', 300)
    x = np.arange(problem.size, dtype=float)
    values, slopes = problem.coefficients(x)
    assert np.array_equal(problem.params(values, slopes), x)


def test_local_objective_holds_constants_at_theta(gaussian_spec, sim1_data):
    spec = gaussian_spec.with_constant({'delta_1', 'delta_2'})
    theta = ThetaPoint([[0.0, 0.0]], [[0.0, 1.0], [0.5, 2.0]], [0.0, 0.5])
    gamma = np.full((sim1_data.n, 2), 0.5)
    value, grad, hess = local_objective_grad_hess(spec, theta, gamma, sim1_data, 0.5, 0.3)
    assert grad.shape == (12,)
    assert hess.shape == (12, 12)
    assert np.isfinite(value)


def test_equal_responsibilities_reduce_to_weighted_least_squares(gaussian_spec, sim1_data):
    grid = (0.2, 0.5, 0.8)
    h = 0.3
    config = FitConfig(bandwidth=h, grid=grid)
    gamma = np.full((sim1_data.n, 2), 0.5)
    values, slopes, frozen = m_step(gaussian_spec, gamma, sim1_data, config, fixed={'delta_1': 0.0, 'delta_2': 0.0})
    assert not frozen.any()
    kernel = get_kernel()
    for g, u in enumerate(grid):
        t = sim1_data.u - u
        w = kernel.scaled_weight(t, h)
        E = np.column_stack([sim1_data.Z, sim1_data.Z * t[:, None]])
        coef = np.linalg.solve((E * w[:, None]).T @ E, (E * w[:, None]).T @ sim1_data.y)
        for c in (1, 2):
            for j in (0, 1):
                k = gaussian_spec.index(f"alpha_{c}_{j}")
                assert isclose(values[g, k], coef[j], atol=1e-6), f"alpha_{c}_{j} at u={u}"
                assert isclose(slopes[g, k], coef[2 + j], atol=1e-6)
        assert np.all(np.abs(values[g, :2]) < 1e-6), 'gate should be flat for equal responsibilities'


def test_collinear_expert_design_is_singular(sim1_data):
    Z = np.column_stack([np.ones(sim1_data.n), np.ones(sim1_data.n)])
    data = Dataset(sim1_data.u, sim1_data.X, Z, sim1_data.y)
    gamma = np.full((data.n, 2), 0.5)
    with pytest.raises(SingularHessian):
        m_step(ModelSpec(2, 2, 2), gamma, data, FitConfig(bandwidth=0.3, n_grid=5))


def test_no_samples_in_window():
    n = 50
    u = np.linspace(0.0, 0.3, n)
    data = Dataset(u, np.ones((n, 1)), np.ones((n, 1)), np.arange(n, dtype=float))
    with pytest.raises(NoEffectiveSamples):
        LocalProblem(ModelSpec(2, 1, 1), data, np.full((n, 2), 0.5), 0.9, 0.1, get_kernel())


def test_newton_on_concave_quadratic():
    A = np.array([[3.0, 1.0], [1.0, 2.0]])
    m = np.array([1.0, -2.0])

    def func(x):
        d = x - m
        return -0.5 * d @ A @ d, -A @ d, -A

    result = newton_maximize(func, np.zeros(2))
    assert result.converged
    assert np.allclose(result.x, m, atol=1e-10)
    assert result.n_iter <= 2


def test_newton_never_descends_from_convex_start():
    def func(x):
        return -(x[0] ** 2 - 1) ** 2, np.array([-4 * x[0] * (x[0] ** 2 - 1)]), np.array([[4 - 12 * x[0] ** 2]])

    start = func(np.array([0.2]))[0]
    result = newton_maximize(func, np.array([0.2]))
    assert result.value >= start
    assert isclose(abs(result.x[0]), 1.0, atol=1e-6)
    assert any(lam > 0 for lam in result.damping_path)
