"""Built-in scalar test problems with closed forms and an enumeration oracle.

All problems have n = d = k = 1 and horizon T = 1 unless overridden.

P0  deterministic trade-off: b = v, h = y^2, g = (y-1)^2, xi = 0, U = [-1, 1]
P1  stochastic spike testbed: b = v, h = y^2, g = y^2, xi = W_T, U = {-1, 0, 1}
P2  chattering gap: b = v, h = y^2, g = 0, xi = 0, U = {-1, 1}
P3a linear y-driver: b = alpha*y, xi = W_T, h = g = 0
P3b linear z-driver: b = beta*z, xi = W_T, h = g = 0
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import (ConfigurationError, ControlLaw, ControlSet, Dimensions, ProblemSpec,
                   TimeGrid)


class OracleInapplicableError(ValueError):
    """The oracle's preconditions do not hold for this problem."""


class OracleBudgetError(ValueError):
    """Enumeration would exceed the candidate budget."""


ORACLE_BUDGET = 10 ** 6


@dataclass(frozen=True, eq=False)
class BuiltinProblem:
    name: str
    spec: ProblemSpec
    description: str
    T: float = 1.0
    metadata: dict = field(default_factory=dict)


def _zero_h(t, y, z, v):
    return np.zeros(y.shape[0])


def _zero_h_y(t, y, z, v):
    return np.zeros_like(y)


def _zero_h_z(t, y, z, v):
    return np.zeros_like(z)


def _zero_b_z(t, y, z, v):
    M, n = y.shape
    return np.zeros((M, n, n, z.shape[2]))


def _zero_b_y(t, y, z, v):
    M, n = y.shape
    return np.zeros((M, n, n))


def _control_drift(t, y, z, v):
    return v.copy()


def _square_h(t, y, z, v):
    return np.sum(y ** 2, axis=1)


def _square_h_y(t, y, z, v):
    return 2.0 * y


def _control_spec(name, g, g_y, xi, control_set, metadata) -> ProblemSpec:
    return ProblemSpec(
        dims=Dimensions(1, 1, 1), b=_control_drift, b_y=_zero_b_y, b_z=_zero_b_z,
        h=_square_h, h_y=_square_h_y, h_z=_zero_h_z, g=g, g_y=g_y, xi=xi,
        control_set=control_set, name=name, metadata=metadata)


def _zero_terminal(w):
    return np.zeros((w.shape[0], 1))


def _brownian_terminal(w):
    return w[:, :1].copy()


def _p0() -> ProblemSpec:
    return _control_spec(
        "P0",
        g=lambda y: (y[:, 0] - 1.0) ** 2, g_y=lambda y: 2.0 * (y - 1.0),
        xi=_zero_terminal, control_set=ControlSet.box(-1.0, 1.0, resolution=5),
        metadata={"deterministic": True})


def _p1() -> ProblemSpec:
    return _control_spec(
        "P1",
        g=lambda y: y[:, 0] ** 2, g_y=lambda y: 2.0 * y,
        xi=_brownian_terminal, control_set=ControlSet.finite([-1.0, 0.0, 1.0]),
        metadata={"deterministic": False})


def _p2() -> ProblemSpec:
    return _control_spec(
        "P2",
        g=lambda y: np.zeros(y.shape[0]), g_y=lambda y: np.zeros_like(y),
        xi=_zero_terminal, control_set=ControlSet.finite([-1.0, 1.0]),
        metadata={"deterministic": True, "relaxed_optimum": [0.5, 0.5]})


def _p3a(alpha: float = 0.5) -> ProblemSpec:
    return ProblemSpec(
        dims=Dimensions(1, 1, 1),
        b=lambda t, y, z, v: alpha * y,
        b_y=lambda t, y, z, v: np.full((y.shape[0], 1, 1), alpha),
        b_z=_zero_b_z, h=_zero_h, h_y=_zero_h_y, h_z=_zero_h_z,
        g=lambda y: np.zeros(y.shape[0]), g_y=lambda y: np.zeros_like(y),
        xi=_brownian_terminal, control_set=ControlSet.finite([0.0]),
        name="P3a", metadata={"alpha": alpha, "deterministic": False})


def _p3b(beta: float = 0.3) -> ProblemSpec:
    return ProblemSpec(
        dims=Dimensions(1, 1, 1),
        b=lambda t, y, z, v: beta * z[:, :, 0],
        b_y=_zero_b_y,
        b_z=lambda t, y, z, v: np.full((y.shape[0], 1, 1, 1), beta),
        h=_zero_h, h_y=_zero_h_y, h_z=_zero_h_z,
        g=lambda y: np.zeros(y.shape[0]), g_y=lambda y: np.zeros_like(y),
        xi=_brownian_terminal, control_set=ControlSet.finite([0.0]),
        name="P3b", metadata={"beta": beta, "deterministic": False})


_CATALOG = {
    "P0": (_p0, "deterministic trade-off"),
    "P1": (_p1, "stochastic spike testbed"),
    "P2": (_p2, "chattering gap"),
    "P3a": (_p3a, "linear BSDE validation, y-driver"),
    "P3b": (_p3b, "linear BSDE validation, z-driver"),
}

PROBLEM_NAMES = tuple(_CATALOG)


def get_problem(name: str) -> BuiltinProblem:
    try:
        factory, description = _CATALOG[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown problem {name!r}; choose from {', '.join(_CATALOG)}") from None
    spec = factory()
    return BuiltinProblem(name, spec, description, metadata=dict(spec.metadata))


def analytic_solution(name: str, t, w, T: float = 1.0):
    """Closed-form ``(y, z)`` at time ``t`` and Brownian state ``w`` for P3a/P3b."""
    t = np.asarray(t, dtype=float)
    w = np.asarray(w, dtype=float)
    if name == "P3a":
        alpha = get_problem("P3a").metadata["alpha"]
        phi = np.exp(alpha * (t - T))
        return phi * w, phi * np.ones_like(w)
    if name == "P3b":
        beta = get_problem("P3b").metadata["beta"]
        return w + beta * (t - T), np.ones_like(w)
    raise OracleInapplicableError(f"no closed form for {name!r}")


# ---------------------------------------------------------------------------
# brute-force oracle (independent of the regression solver: plain RK4 on the
# deterministic backward ODE, integrating the running cost alongside)


@dataclass(frozen=True, eq=False)
class OracleResult:
    control: ControlLaw
    value: float
    pattern: np.ndarray      # (B, k) block values
    blocks: int
    atoms: np.ndarray
    candidates: int

    def to_dict(self, problem: str) -> dict:
        return {"problem": problem, "blocks": self.blocks, "atoms": self.atoms.tolist(),
                "value": self.value, "control pattern": self.pattern.tolist(),
                "candidates": self.candidates}


def _assert_deterministic_reducible(spec: ProblemSpec, rng) -> None:
    n, d = spec.dims.n, spec.dims.d
    w = rng.normal(size=(16, d))
    xi = spec.xi(w)
    if not np.allclose(xi, xi[0], rtol=0, atol=0):
        raise OracleInapplicableError(f"{spec.name}: terminal data depends on W_T")
    y = rng.normal(size=(16, n))
    z = rng.normal(size=(16, n, d))
    v = spec.control_set.sample(rng, 16)
    if np.any(spec.b_z(0.3, y, z, v) != 0) or np.any(spec.h_z(0.3, y, z, v) != 0):
        raise OracleInapplicableError(f"{spec.name}: coefficients depend on z")


def block_schedule(pattern: np.ndarray, grid: TimeGrid, control_set: ControlSet,
                   label: str = "oracle") -> ControlLaw:
    """Time-only law taking ``pattern[j]`` on block ``j`` of ``len(pattern)``
    equal blocks; node ``t_i`` belongs to the block containing ``[t_i, t_{i+1})``."""
    pattern = np.asarray(pattern, dtype=float).reshape(len(pattern), -1).copy()
    pattern.setflags(write=False)
    B = len(pattern)
    nodes = grid.nodes

    def fn(i, w):
        j = min(int(np.floor(nodes[i] / grid.T * B + 1e-9)), B - 1)
        return pattern[j]

    return ControlLaw(fn, control_set, label, time_only=True)


def brute_force_optimum(spec: ProblemSpec, blocks: int, atoms=None, substeps: int = 16,
                        T: float = 1.0, grid: Optional[TimeGrid] = None) -> OracleResult:
    """Enumerate all piecewise-constant time-only controls on ``blocks``
    equal blocks with values in ``atoms`` and return the cheapest.

    Each candidate is scored by integrating ``y' = b`` backward from
    ``y_T = xi`` together with ``x' = h`` using ``substeps`` RK4 steps per
    block; the value is ``g(y_0) + x``. Ties go to the lexicographically
    smallest pattern.
    """
    if blocks < 1 or substeps < 1:
        raise ConfigurationError("blocks and substeps must be >= 1")
    _assert_deterministic_reducible(spec, np.random.default_rng(12345))
    atoms = spec.control_set.grid() if atoms is None else np.asarray(atoms, dtype=float)
    if atoms.ndim == 1:
        atoms = atoms[:, None]
    L = atoms.shape[0]
    if L ** blocks > ORACLE_BUDGET:
        raise OracleBudgetError(f"{L}^{blocks} candidates exceed the budget of {ORACLE_BUDGET}")
    n, d = spec.dims.n, spec.dims.d
    idx = np.array(list(itertools.product(range(L), repeat=blocks)), dtype=np.int64)
    C = idx.shape[0]
    zeros_z = np.zeros((C, n, d))

    def rhs(t, y, v):
        return spec.b(t, y, zeros_z, v), spec.h(t, y, zeros_z, v)

    y = np.repeat(spec.xi(np.zeros((1, d))), C, axis=0)
    x = np.zeros(C)
    h_step = T / (blocks * substeps)
    # integrate backward from T to 0 in time, s = T - t
    for j in range(blocks - 1, -1, -1):
        v = atoms[idx[:, j]]
        for s in range(substeps, 0, -1):
            t1 = (j * substeps + s) * h_step
            k1y, k1x = rhs(t1, y, v)
            k2y, k2x = rhs(t1 - h_step / 2, y - h_step / 2 * k1y, v)
            k3y, k3x = rhs(t1 - h_step / 2, y - h_step / 2 * k2y, v)
            k4y, k4x = rhs(t1 - h_step, y - h_step * k3y, v)
            y = y - h_step / 6 * (k1y + 2 * k2y + 2 * k3y + k4y)
            x = x + h_step / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
    values = spec.g(y) + x
    order = np.lexsort(tuple(idx[:, c] for c in range(blocks - 1, -1, -1)) + (values,))
    best = order[0]
    pattern = atoms[idx[best]]
    if grid is None:
        grid = TimeGrid(T, blocks)
    label = "oracle[" + ",".join(f"{a:+g}" for a in pattern[:, 0]) + "]"
    control = block_schedule(pattern, grid, spec.control_set, label)
    return OracleResult(control, float(values[best]), pattern, blocks, atoms, C)
