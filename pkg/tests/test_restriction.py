import numpy as np
import pytest

from bsde_smp import (AdjointPath, Dimensions, ReductionInvariantError, augment_problem,
                      constant_control, evaluate_cost, get_problem, reduce_adjoint,
                      restricted_cost, solve_adjoint, solve_bsde)
from bsde_smp.acceptance import restriction_comparison


def test_augmented_shapes_and_terminal():
    spec = get_problem("P1").spec
    aug = augment_problem(spec, eta=lambda w: w[:, 0] ** 2)
    assert aug.spec.dims == Dimensions(2, 1, 1)
    w = np.array([[0.5], [-2.0]])
    assert np.allclose(aug.spec.xi(w), [[0.5, 0.25], [-2.0, 4.0]])
    y = np.array([[1.0, 0.3]])
    assert aug.spec.g(y)[0] == pytest.approx(1.0 - 0.3)
    assert np.allclose(aug.spec.g_y(y), [[2.0, -1.0]])


@pytest.mark.parametrize("name,value", [("P0", 0.5), ("P1", -1.0), ("P2", 1.0)])
def test_restricted_cost_identity(name, value, bundle_small):
    spec = get_problem(name).spec
    u = constant_control(value, spec.control_set)
    row = restriction_comparison(spec, u, bundle_small, __import__("bsde_smp").RegressionConfig())
    assert row["passed"], row


def test_eta_only_shifts_the_auxiliary_state(bundle_small):
    spec = get_problem("P2").spec
    u = constant_control(1.0, spec.control_set)
    aug = augment_problem(spec, eta=lambda w: np.ones(w.shape[0]))
    tr = solve_bsde(aug.spec, u, bundle_small)
    J = evaluate_cost(spec, u, solve_bsde(spec, u, bundle_small))
    assert restricted_cost(aug, u, tr).value == pytest.approx(J.value, abs=1e-12)


def test_reduced_adjoint(bundle_small):
    spec = get_problem("P1").spec
    u = constant_control(1.0, spec.control_set)
    aug = augment_problem(spec)
    adj_aug = solve_adjoint(aug.spec, u, solve_bsde(aug.spec, u, bundle_small))
    assert np.all(adj_aug.p[:, :, 1] == -1.0)
    red = reduce_adjoint(adj_aug, spec.dims)
    strict = solve_adjoint(spec, u, solve_bsde(spec, u, bundle_small))
    assert np.allclose(red.p, strict.p, atol=1e-10)


def test_reduce_adjoint_detects_drift(bundle_small):
    p = -np.ones((3, 5, 2))
    p[1, 2, 1] = -0.9
    with pytest.raises(ReductionInvariantError):
        reduce_adjoint(AdjointPath(p, bundle_small), Dimensions(1, 1, 1))
