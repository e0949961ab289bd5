import numpy as np
import pytest

from bsde_smp import (constant_control, get_problem, hamiltonian, hamiltonian_partials,
                      solve_adjoint, solve_bsde)


def test_hamiltonian_examples():
    spec = get_problem("P2").spec
    y = np.array([[0.5]]); z = np.zeros((1, 1, 1)); p = np.array([[2.0]])
    assert hamiltonian(spec, 0.0, y, z, p, np.array([[1.0]]))[0] == pytest.approx(2.0 - 0.25)
    H_y, H_z = hamiltonian_partials(spec, 0.0, y, z, p, np.array([[1.0]]))
    assert H_y[0, 0] == pytest.approx(-1.0) and H_z[0, 0, 0] == 0.0


def test_p2_adjoint_closed_form(bundle_small):
    # u = +1: y_t = -(T - t), p_0 = 0, dp = 2y dt  =>  p_t = t^2 - 2 T t
    spec = get_problem("P2").spec
    u = constant_control(1.0, spec.control_set)
    tr = solve_bsde(spec, u, bundle_small)
    adj = solve_adjoint(spec, u, tr)
    t = bundle_small.grid.nodes
    assert np.all(adj.p[:, 0] == 0.0)
    assert np.max(np.abs(adj.p[0, :, 0] - (t ** 2 - 2 * t))) < 2 * bundle_small.grid.dt
    assert np.all(adj.p[:, 1:] < 0)


def test_p3b_adjoint_is_driven_by_the_z_partial(bundle_small):
    # g = 0 and H_y = 0, H_z = beta p: p stays 0
    spec = get_problem("P3b").spec
    u = constant_control(0.0, spec.control_set)
    adj = solve_adjoint(spec, u, solve_bsde(spec, u, bundle_small))
    assert np.all(adj.p == 0.0)


def test_argmax_invariant_under_cost_scaling(bundle_small):
    import dataclasses
    from bsde_smp.adjoint import hamiltonian_over_atoms
    spec = get_problem("P1").spec
    c = 3.5
    scaled = dataclasses.replace(
        spec, h=lambda t, y, z, v: c * spec.h(t, y, z, v),
        h_y=lambda t, y, z, v: c * spec.h_y(t, y, z, v),
        g=lambda y: c * spec.g(y), g_y=lambda y: c * spec.g_y(y))
    u = constant_control(0.0, spec.control_set)
    atoms = spec.control_set.grid()
    tr = solve_bsde(spec, u, bundle_small)
    H1 = hamiltonian_over_atoms(spec, tr, solve_adjoint(spec, u, tr), atoms)
    H2 = hamiltonian_over_atoms(scaled, tr, solve_adjoint(scaled, u, tr), atoms)
    assert np.allclose(H2, c * H1, rtol=1e-10, atol=1e-12)
    assert np.array_equal(H1.argmax(axis=2), H2.argmax(axis=2))
