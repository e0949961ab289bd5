import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bsde_smp import (ConfigurationError, RegressionConfig, RegressionError, constant_control,
                      evaluate_cost, get_problem, regress, solve_bsde)
from bsde_smp.solver import PolynomialFit


def test_regression_preserves_mean_and_reproduces_polynomials():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5000, 1))
    y = 1.0 - 2.0 * x[:, 0] + 0.5 * x[:, 0] ** 3
    fit = regress(x, y, RegressionConfig(3))
    assert np.max(np.abs(fit - y)) < 1e-8
    noisy = y + rng.normal(size=5000)
    assert abs(regress(x, noisy, RegressionConfig(3)).mean() - noisy.mean()) < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.integers(0, 1000))
def test_regression_exact_on_quadratics(coef, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(400, 2))
    y = coef[0] + coef[1] * x[:, 0] * x[:, 1] + coef[2] * x[:, 1] ** 2
    assert np.allclose(regress(x, y, RegressionConfig(2)), y, atol=1e-7)


def test_zero_spread_features_give_plain_mean():
    x = np.zeros((100, 1))
    y = np.arange(100.0)
    assert np.allclose(regress(x, y, RegressionConfig(3)), 49.5)


def test_model_predicts_new_points():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1000, 1))
    pred = PolynomialFit(x, RegressionConfig(2)).model(3 * x[:, 0] ** 2)
    assert np.allclose(pred(np.array([[0.0], [2.0]])), [0.0, 12.0], atol=1e-8)


def test_basis_too_large_for_paths():
    with pytest.raises(ConfigurationError):
        regress(np.random.default_rng(0).normal(size=(30, 1)), np.zeros(30), RegressionConfig(3))


def test_singular_normal_equations():
    x = np.repeat([[0.0], [1.0]], 50, axis=0)      # two distinct values, cubic basis
    with pytest.raises(RegressionError):
        regress(x, np.zeros(100), RegressionConfig(3, ridge=0.0))


@pytest.mark.parametrize("name", ["P3a", "P3b"])
def test_linear_bsdes_against_closed_form(name, bundle_64):
    from bsde_smp import analytic_solution
    spec = get_problem(name).spec
    tr = solve_bsde(spec, constant_control(0.0, spec.control_set), bundle_64)
    y0, z0 = analytic_solution(name, 0.0, 0.0)
    assert abs(tr.y[:, 0, 0].mean() - y0) < 0.03
    assert abs(tr.z[:, 0, 0, 0].mean() - z0) < 0.05
    assert np.all(tr.z[:, -1] == 0)


def test_deterministic_control_problem(bundle_small):
    # b = v, xi = 0: y_t = -v (T - t) exactly in the explicit scheme
    spec = get_problem("P0").spec
    tr = solve_bsde(spec, constant_control(-1.0, spec.control_set), bundle_small)
    nodes = bundle_small.grid.nodes
    assert np.allclose(tr.y[:, :, 0], (1.0 - nodes)[None, :], atol=1e-12)
    assert np.allclose(tr.z, 0.0, atol=1e-12)
    J = evaluate_cost(spec, constant_control(-1.0, spec.control_set), tr)
    assert J.stderr == 0.0
    dt = bundle_small.grid.dt
    expected = 0.0 + sum(((1 - (i + 1) * dt)) ** 2 * dt for i in range(32))
    assert J.value == pytest.approx(expected, abs=1e-12)


def test_solution_is_deterministic(bundle_small):
    spec = get_problem("P1").spec
    u = constant_control(1.0, spec.control_set)
    a, b = solve_bsde(spec, u, bundle_small), solve_bsde(spec, u, bundle_small)
    assert np.array_equal(a.y, b.y) and np.array_equal(a.z, b.z)
