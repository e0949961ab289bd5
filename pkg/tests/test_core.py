import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bsde_smp import (ConfigurationError, ControlLaw, ControlSet, Dimensions,
                      GradientMismatchError, TimeGrid, build_grid, constant_control,
                      control_distance, get_problem, sample_brownian, schedule_control,
                      validate_spec)
from bsde_smp.core import control_mismatch_count
from bsde_smp.problems import PROBLEM_NAMES


def test_grid_nodes_end_exactly_at_T():
    g = build_grid(0.7, 7)
    assert g.nodes[-1] == 0.7
    assert g.t(7) == 0.7
    assert np.allclose(np.diff(g.nodes), 0.1)


@pytest.mark.parametrize("T,N", [(0.0, 4), (-1.0, 4), (1.0, 0), (1.0, 2.5)])
def test_grid_rejects_bad_input(T, N):
    with pytest.raises(ConfigurationError):
        build_grid(T, N)


def test_bundle_independent_of_worker_count():
    g, dims = TimeGrid(1.0, 16), Dimensions(1, 2, 1)
    a = sample_brownian(g, dims, 301, seed=11, workers=1)
    b = sample_brownian(g, dims, 301, seed=11, workers=4)
    assert np.array_equal(a.dW, b.dW) and np.array_equal(a.W, b.W)
    assert a.W.shape == (301, 17, 2)
    assert np.all(a.W[:, 0] == 0)


def test_bundle_prefix_stable_and_read_only():
    g, dims = TimeGrid(1.0, 8), Dimensions(1, 1, 1)
    small = sample_brownian(g, dims, 10, seed=2)
    big = sample_brownian(g, dims, 50, seed=2)
    assert np.array_equal(small.dW, big.dW[:10])
    with pytest.raises(ValueError):
        small.W[0, 0, 0] = 1.0


def test_bundle_moments():
    g = TimeGrid(1.0, 4)
    b = sample_brownian(g, Dimensions(1, 1, 1), 20000, seed=0)
    assert abs(b.W[:, -1, 0].mean()) < 0.03
    assert abs(b.W[:, -1, 0].var() - 1.0) < 0.05


def test_control_sets():
    box = ControlSet.box(-1, 1, resolution=5)
    assert box.is_convex and box.k == 1
    assert np.allclose(box.grid()[:, 0], [-1, -0.5, 0, 0.5, 1])
    assert box.contains(np.array([[0.3]]))[0] and not box.contains(np.array([[1.1]]))[0]
    fin = ControlSet.finite([-1.0, 1.0])
    assert not fin.is_convex
    assert fin.contains(np.array([[1.0], [0.0]])).tolist() == [True, False]
    assert ControlSet.finite([2.0]).is_convex
    simplex = ControlSet.simplex(3)
    assert simplex.contains(np.array([0.2, 0.3, 0.5]))
    assert not simplex.contains(np.array([0.2, 0.3, 0.6]))


def test_control_law_validation(bundle_small):
    cs = ControlSet.finite([-1.0, 1.0])
    bad = ControlLaw(lambda i, w: np.zeros((w.shape[0], 1)), cs, "zero")
    with pytest.raises(ConfigurationError):
        bad.evaluate(0, bundle_small)
    with pytest.raises(ConfigurationError):
        constant_control(0.5, cs)
    sched = schedule_control(np.where(np.arange(32) < 16, -1.0, 1.0), cs)
    vals = sched.values(bundle_small)
    assert vals.shape == (2000, 32, 1)
    assert np.all(vals[:, :16] == -1) and np.all(vals[:, 16:] == 1)


def test_path_dependent_law_sees_history_only(bundle_small):
    seen = []

    def fn(i, hist):
        seen.append(hist.shape[1])
        return np.ones((hist.shape[0], 1))

    law = ControlLaw(fn, ControlSet.finite([1.0]), "hist", path_dependent=True)
    law.values(bundle_small)
    assert seen == list(range(1, 33))


@pytest.mark.parametrize("name", PROBLEM_NAMES)
def test_builtin_problems_validate(name):
    rep = validate_spec(get_problem(name).spec)
    assert rep.worst <= 1e-6
    assert {"b_y", "b_z", "h_y", "h_z", "g_y", "H_y", "H_z"} <= set(rep.max_rel_error)


def test_quadratic_costs_flagged_not_rejected():
    rep = validate_spec(get_problem("P1").spec)
    assert "unbounded h" in rep.flags


def test_wrong_partial_raises():
    import dataclasses
    spec = get_problem("P0").spec
    broken = dataclasses.replace(spec, h_y=lambda t, y, z, v: 3.0 * y)
    with pytest.raises(GradientMismatchError) as exc:
        validate_spec(broken)
    assert exc.value.name in ("h_y", "H_y")


def _laws(cs):
    return [constant_control(-1.0, cs), constant_control(1.0, cs),
            ControlLaw(lambda i, w: np.where(w > 0, 1.0, -1.0), cs, "sign"),
            ControlLaw(lambda i, w: np.where(w > 0.5 * (i % 3), -1.0, 1.0), cs, "mixed")]


def test_distance_examples(bundle_small):
    cs = ControlSet.finite([-1.0, 1.0])
    u, v, _, _ = _laws(cs)
    g = bundle_small.grid
    assert control_distance(u, u, g, bundle_small) == 0.0
    assert control_distance(u, v, g, bundle_small) == g.T


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 3), st.integers(0, 3), st.integers(0, 3), st.integers(0, 2 ** 16))
def test_distance_metric_axioms(a, b, c, seed):
    cs = ControlSet.finite([-1.0, 1.0])
    bundle = sample_brownian(TimeGrid(1.0, 8), Dimensions(1, 1, 1), 64, seed)
    laws = _laws(cs)
    g = bundle.grid
    d = lambda x, y: control_distance(laws[x], laws[y], g, bundle)
    n = lambda x, y: control_mismatch_count(laws[x], laws[y], bundle)
    assert d(a, a) == 0.0
    assert d(a, b) == d(b, a)
    assert n(a, c) <= n(a, b) + n(b, c)
    assert d(a, c) <= d(a, b) + d(b, c)
    assert 0.0 <= d(a, b) <= g.T
