import dataclasses

import numpy as np
import pytest

from bsde_smp import (ConfigurationError, ControlSet, Dimensions, ProblemSpec, SpikeSpec,
                      check_necessary, check_sufficient_assumptions, constant_control,
                      control_distance, get_problem, improve_by_hamiltonian_ascent,
                      solve_adjoint, solve_bsde, spike_convergence_study, spike_perturb)
from bsde_smp.acceptance import p2_mutant


def _node_values(law, grid):
    w = np.zeros((2, 1))
    return np.array([law(i, w)[0, 0] for i in range(grid.N)])


def test_spike_examples(bundle_small):
    grid = bundle_small.grid
    cs = get_problem("P2").spec.control_set
    u = constant_control(1.0, cs)
    full = spike_perturb(u, SpikeSpec(0.0, 2.0, -1.0), grid)
    assert np.all(_node_values(full, grid) == -1.0)
    between = spike_perturb(u, SpikeSpec(0.5 + 0.25 * grid.dt, 0.5 * grid.dt, -1.0), grid)
    assert np.all(_node_values(between, grid) == 1.0)
    mid = spike_perturb(u, SpikeSpec(0.5, 0.25, -1.0), grid)
    vals = _node_values(mid, grid)
    inside = (grid.nodes[:-1] >= 0.5) & (grid.nodes[:-1] < 0.75)
    assert np.all(vals[inside] == -1.0) and np.all(vals[~inside] == 1.0)
    assert "tau=0.5" in mid.label and "theta=0.25" in mid.label
    with pytest.raises(ConfigurationError):
        spike_perturb(u, SpikeSpec(0.5, 0.25, 0.0), grid)


def test_spike_distance_is_theta(bundle_small):
    grid = bundle_small.grid
    cs = get_problem("P1").spec.control_set
    u = constant_control(0.0, cs)
    for k in (1, 4, 8):
        theta = k * grid.dt
        law = spike_perturb(u, SpikeSpec(0.25, theta, 1.0), grid)
        assert control_distance(u, law, grid, bundle_small) == theta


def test_spike_study_null_and_errors(bundle_small):
    spec = get_problem("P1").spec
    u = constant_control(1.0, spec.control_set)
    st = spike_convergence_study(spec, u, 0.0, 1.0, [0.25, 0.125, 0.0625], bundle_small)
    assert np.all(st.y_moments == 0) and np.all(st.z_moments == 0)
    with pytest.raises(ConfigurationError):
        spike_convergence_study(spec, u, 0.0, -1.0, [0.25, 0.1, 0.0625], bundle_small)
    with pytest.raises(ConfigurationError):
        spike_convergence_study(spec, u, 0.0, -1.0, [0.25, 0.125], bundle_small)
    with pytest.raises(ConfigurationError):
        spike_convergence_study(spec, u, 0.9, -1.0, [0.25, 0.125, 0.0625], bundle_small)


def test_spike_study_rates_on_p1(bundle_64):
    spec = get_problem("P1").spec
    st = spike_convergence_study(spec, constant_control(0.0, spec.control_set), 0.5, 1.0,
                                 [0.25, 0.125, 0.0625], bundle_64)
    assert 1.7 <= st.y_slope <= 2.3
    assert np.all(np.diff(st.y_moments) < 0)


def test_check_necessary_report_structure(bundle_small):
    spec = get_problem("P0").spec
    u = constant_control(0.0, spec.control_set)
    tr = solve_bsde(spec, u, bundle_small)
    rep = check_necessary(spec, u, tr, solve_adjoint(spec, u, tr))
    assert 0 <= rep.mean_gap <= rep.max_gap
    q = rep.quantiles
    assert q["50"] <= q["90"] <= q["99"] <= rep.max_gap
    assert len(rep.worst) == bundle_small.grid.N
    assert rep.verdict == "fail" and rep.mean_gap >= 10 * rep.tolerance
    assert rep.tolerance == 1e-3


def test_off_grid_control_gap_is_nonnegative(bundle_small):
    spec = get_problem("P0").spec
    u = constant_control(0.3, spec.control_set)
    tr = solve_bsde(spec, u, bundle_small)
    rep = check_necessary(spec, u, tr, solve_adjoint(spec, u, tr))
    assert rep.mean_gap >= 0 and rep.quantiles["50"] >= 0


def test_singleton_control_set_passes(bundle_small):
    spec = get_problem("P3a").spec
    u = constant_control(0.0, spec.control_set)
    tr = solve_bsde(spec, u, bundle_small)
    rep = check_necessary(spec, u, tr, solve_adjoint(spec, u, tr))
    assert rep.max_gap == 0.0 and rep.passed


def test_empty_grid_rejected(bundle_small):
    spec = get_problem("P0").spec
    u = constant_control(0.0, spec.control_set)
    tr = solve_bsde(spec, u, bundle_small)
    with pytest.raises(ConfigurationError):
        check_necessary(spec, u, tr, solve_adjoint(spec, u, tr), atoms=np.zeros((0, 1)))


def test_sufficiency_examples():
    p1 = check_sufficient_assumptions(get_problem("P1").spec)      # g = y^2, H concave
    assert p1.passed
    box = check_sufficient_assumptions(get_problem("P2").spec,
                                       control_set=ControlSet.box(-1, 1))
    assert box.passed and box.control_set_convex
    assert not check_sufficient_assumptions(get_problem("P2").spec).control_set_convex
    bad = check_sufficient_assumptions(p2_mutant())
    assert not bad.passed and bad.h_defect > 0
    concave_g = dataclasses.replace(get_problem("P0").spec, g=lambda y: -y[:, 0] ** 2,
                                    g_y=lambda y: -2 * y)
    assert check_sufficient_assumptions(concave_g).g_defect > 0


def _linear_problem():
    # b = v, h = 0, g = y: p = 1, argmax_v H = +1
    zero = lambda t, y, z, v: np.zeros(y.shape[0])
    return ProblemSpec(
        dims=Dimensions(1, 1, 1), b=lambda t, y, z, v: v.copy(),
        b_y=lambda t, y, z, v: np.zeros((y.shape[0], 1, 1)),
        b_z=lambda t, y, z, v: np.zeros((y.shape[0], 1, 1, 1)),
        h=zero, h_y=lambda t, y, z, v: np.zeros_like(y), h_z=lambda t, y, z, v: np.zeros_like(z),
        g=lambda y: y[:, 0].copy(), g_y=lambda y: np.ones_like(y),
        xi=lambda w: np.zeros((w.shape[0], 1)), control_set=ControlSet.finite([-1.0, 0.0, 1.0]),
        name="linear")


def test_ascent_from_fixed_point(bundle_small):
    spec = _linear_problem()
    res = improve_by_hamiltonian_ascent(spec, constant_control(1.0, spec.control_set),
                                        bundle_small)
    assert res.converged and res.distances == [0.0] and len(res.controls) == 1
    assert res.costs[0].value == pytest.approx(-1.0)


def test_ascent_reaches_fixed_point(bundle_small):
    spec = _linear_problem()
    res = improve_by_hamiltonian_ascent(spec, constant_control(-1.0, spec.control_set),
                                        bundle_small)
    assert res.converged and res.distances[-1] == 0.0
    assert [c.value for c in res.costs] == pytest.approx([1.0, -1.0])
    assert res.controls[-1].time_only


def test_ascent_singleton(bundle_small):
    spec = get_problem("P3a").spec
    res = improve_by_hamiltonian_ascent(spec, constant_control(0.0, spec.control_set),
                                        bundle_small)
    assert res.converged and len(res.controls) == 1 and len(res.costs) == 1


def test_ascent_cycle_is_a_warning(bundle_small):
    spec = get_problem("P0").spec
    with pytest.warns(RuntimeWarning, match="period-2"):
        res = improve_by_hamiltonian_ascent(spec, constant_control(0.0, spec.control_set),
                                            bundle_small)
    assert not res.converged and res.warnings
    assert len(res.costs) == len(res.controls)
