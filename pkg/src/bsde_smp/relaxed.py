"""Relaxed (measure-valued) controls on a finite atom set.

A relaxed control puts probability weights ``w_l(i, W)`` on atoms
``a_1..a_L`` of U. Averaging the coefficients against the weights gives an
ordinary problem whose control is the weight vector itself, so the strict
solver, cost and adjoint apply unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .adjoint import AdjointPath, hamiltonian, hamiltonian_over_atoms, solve_adjoint
from .core import (BrownianBundle, ConfigurationError, ControlLaw, ControlSet, ProblemSpec,
                   TimeGrid, control_distance, random_arguments)
from .maximum_principle import (SufficiencyReport, ViolationReport, check_necessary,
                                gap_report, maximisation_atoms)
from .solver import CostEstimate, RegressionConfig, Trajectory, evaluate_cost, solve_bsde

__all__ = ["RelaxedControlLaw", "ChatteringSchedule", "NearOptimalityReport",
           "embed_strict", "constant_weights", "average_coefficients", "solve_relaxed_bsde",
           "relaxed_cost", "relaxed_hamiltonian", "solve_relaxed_adjoint",
           "chattering_sequence", "stable_convergence_diagnostic",
           "chattering_convergence_study", "control_distance", "near_optimality_check",
           "check_relaxed_necessary", "check_relaxed_sufficient"]

WEIGHT_TOL = 1e-12
SLACK = 1.10


@dataclass(eq=False)
class RelaxedControlLaw:
    """Weights ``weight_fn(i, w) -> (M, L)`` over ``atoms`` (L, k).

    ``time_only`` laws may ignore ``w``; the returned weights are validated
    against the simplex on every call.
    """
    atoms: np.ndarray
    weight_fn: Callable
    control_set: ControlSet
    label: str = "relaxed"
    time_only: bool = False

    def __post_init__(self):
        a = np.asarray(self.atoms, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        if a.shape[0] == 0:
            raise ConfigurationError("relaxed control needs at least one atom")
        if not np.all(self.control_set.contains(a)):
            raise ConfigurationError("relaxed control atoms must lie in U")
        self.atoms = a

    @property
    def L(self) -> int:
        return self.atoms.shape[0]

    def __call__(self, i: int, w: np.ndarray) -> np.ndarray:
        M = w.shape[0]
        q = np.asarray(self.weight_fn(i, w), dtype=float)
        q = np.broadcast_to(q, (M, self.L))
        if np.any(q < -WEIGHT_TOL) or np.any(np.abs(q.sum(axis=1) - 1.0) > WEIGHT_TOL):
            raise ConfigurationError(f"{self.label}: weights at node {i} leave the simplex")
        return q

    def weights(self, i: int, bundle: BrownianBundle) -> np.ndarray:
        return self(i, bundle.W[:, i])

    def as_control_law(self) -> ControlLaw:
        """The weight vector as an ordinary control with values in the simplex."""
        return ControlLaw(self.__call__, ControlSet.simplex(self.L), self.label, self.time_only)


def constant_weights(atoms, weights, control_set: ControlSet,
                     label: Optional[str] = None) -> RelaxedControlLaw:
    w = np.asarray(weights, dtype=float).copy()
    w.setflags(write=False)
    label = label or "mix:" + ",".join(f"{x:g}" for x in w)
    return RelaxedControlLaw(atoms, lambda i, s: w, control_set, label, time_only=True)


def embed_strict(control: ControlLaw, atoms=None) -> RelaxedControlLaw:
    """Dirac weights at the atom matching ``control`` at every (i, w)."""
    atoms = control.control_set.grid() if atoms is None else np.asarray(atoms, dtype=float)
    if atoms.ndim == 1:
        atoms = atoms[:, None]

    def fn(i, w):
        v = control(i, w)
        hit = np.all(np.abs(v[:, None, :] - atoms[None]) <= 1e-12, axis=2)   # (M, L)
        missing = ~hit.any(axis=1)
        if missing.any():
            raise ConfigurationError(
                f"control value {v[np.flatnonzero(missing)[0]]} at node {i} is not an atom")
        first = np.argmax(hit, axis=1)
        out = np.zeros(hit.shape)
        out[np.arange(hit.shape[0]), first] = 1.0
        return out

    if control.path_dependent:
        raise ConfigurationError("embed_strict needs a Markov law of (i, W_i)")
    return RelaxedControlLaw(atoms, fn, control.control_set, "dirac:" + control.label,
                             control.time_only)


# ---------------------------------------------------------------------------
# averaged coefficients


def _atom_batch(atom, M):
    return np.broadcast_to(atom, (M, atom.size))


def average_coefficients(spec: ProblemSpec, q: RelaxedControlLaw) -> ProblemSpec:
    """Problem whose coefficients at weight vector ``w`` are
    ``sum_l w_l f(t, y, z, a_l)`` for ``f`` in ``b, h`` and their partials.

    The control of the returned spec is the weight vector (k = L) with
    ``ControlSet.simplex(L)``; any law of the original problem enters through
    its Dirac embedding.
    """
    atoms = q.atoms

    def averaged(f):
        def out(t, y, z, w):
            M = y.shape[0]
            acc = None
            for l, a in enumerate(atoms):
                val = f(t, y, z, _atom_batch(a, M))
                term = w[:, l].reshape((M,) + (1,) * (val.ndim - 1)) * val
                acc = term if acc is None else acc + term
            return acc
        return out

    return ProblemSpec(
        dims=type(spec.dims)(spec.dims.n, spec.dims.d, q.L),
        b=averaged(spec.b), b_y=averaged(spec.b_y), b_z=averaged(spec.b_z),
        h=averaged(spec.h), h_y=averaged(spec.h_y), h_z=averaged(spec.h_z),
        g=spec.g, g_y=spec.g_y, xi=spec.xi, control_set=ControlSet.simplex(q.L),
        name=spec.name + "^mu", metadata={"averaged_from": spec.name,
                                          "atoms": atoms.tolist()})


def solve_relaxed_bsde(spec: ProblemSpec, q: RelaxedControlLaw, bundle: BrownianBundle,
                       config: RegressionConfig = RegressionConfig()) -> Trajectory:
    return solve_bsde(average_coefficients(spec, q), q.as_control_law(), bundle, config)


def relaxed_cost(spec: ProblemSpec, q: RelaxedControlLaw, traj: Trajectory) -> CostEstimate:
    return evaluate_cost(average_coefficients(spec, q), q.as_control_law(), traj)


def relaxed_hamiltonian(spec: ProblemSpec, t, y, z, p, weights, atoms) -> np.ndarray:
    """``sum_l w_l H(t, y, z, p, a_l)``; weights (M, L) or (L,)."""
    atoms = np.asarray(atoms, dtype=float)
    if atoms.ndim == 1:
        atoms = atoms[:, None]
    M = y.shape[0]
    w = np.broadcast_to(np.asarray(weights, dtype=float), (M, atoms.shape[0]))
    acc = np.zeros(M)
    for l, a in enumerate(atoms):
        acc = acc + w[:, l] * hamiltonian(spec, t, y, z, p, _atom_batch(a, M))
    return acc


def solve_relaxed_adjoint(spec: ProblemSpec, q: RelaxedControlLaw, traj: Trajectory,
                          bundle: Optional[BrownianBundle] = None) -> AdjointPath:
    return solve_adjoint(average_coefficients(spec, q), q.as_control_law(), traj, bundle)


# ---------------------------------------------------------------------------
# chattering


@dataclass(eq=False)
class ChatteringSchedule:
    level: int
    control: ControlLaw
    source: RelaxedControlLaw


def chattering_sequence(q: RelaxedControlLaw, n: int, grid: TimeGrid) -> ChatteringSchedule:
    """Strict law switching through the atoms of ``q`` inside each of ``n``
    blocks.

    Node ``i`` in block ``j`` (first node ``i0``) has in-block position
    ``s = (i - i0) / (N / n)`` and takes the first atom whose cumulative
    weight, frozen at ``(i0, W_{i0})``, exceeds ``s``. A block of ``N / n``
    nodes resolves weights only to multiples of ``n / N``; at ``n = N`` every
    block emits its first atom with positive weight.
    """
    N = grid.N
    if n < 1 or N % n:
        raise ConfigurationError(f"level {n} does not divide N = {N}")
    size = N // n
    atoms = q.atoms.copy()

    def pick(i, w_block):
        i0 = (i // size) * size
        s = (i - i0) / size
        cum = np.cumsum(q(i0, w_block), axis=1)
        cum[:, -1] = np.inf
        return atoms[np.argmax(cum > s, axis=1)]

    if q.time_only:
        law = ControlLaw(pick, q.control_set, f"chatter[{n}]:{q.label}", time_only=True)
    else:
        def fn(i, hist):
            return pick(i, hist[:, (i // size) * size])
        law = ControlLaw(fn, q.control_set, f"chatter[{n}]:{q.label}", path_dependent=True)
    return ChatteringSchedule(n, law, q)


def _nonincreasing(values, slack: float = SLACK) -> bool:
    v = np.asarray(values, dtype=float)
    return bool(np.all(v[1:] <= slack * v[:-1] + 1e-15))


@dataclass
class StudyTable:
    """Rows of a level study plus the monotonicity verdicts of its columns."""
    columns: list
    rows: list
    monotone: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def column(self, name) -> np.ndarray:
        j = self.columns.index(name)
        return np.array([r[j] for r in self.rows], dtype=float)


def _check_levels(levels, grid):
    levels = [int(n) for n in levels]
    if len(levels) < 2:
        raise ConfigurationError("need at least two levels")
    for n in levels:
        if n < 1 or grid.N % n:
            raise ConfigurationError(f"level {n} does not divide N = {grid.N}")
    return sorted(levels)


def stable_convergence_diagnostic(q: RelaxedControlLaw, levels: Sequence[int],
                                  test_functions: dict, grid: TimeGrid,
                                  bundle: BrownianBundle) -> StudyTable:
    """Time-averaged running gap

        (1/T) int_0^T |int_0^t (f(s, u^n_s) - sum_l w_l f(s, a_l)) ds| dt

    averaged over paths, for each level and each named test function
    ``f(t, a) -> (M,)``. Testing against every ``[0, t]`` rather than the
    whole horizon is what distinguishes stable convergence from agreement of
    the total integral.
    """
    levels = _check_levels(levels, grid)
    if not test_functions:
        raise ConfigurationError("need at least one test function")
    M, N, dt = bundle.M, grid.N, grid.dt
    target = {name: np.empty((M, N)) for name in test_functions}
    for i in range(N):
        w, t = q.weights(i, bundle), grid.t(i)
        for name, f in test_functions.items():
            target[name][:, i] = sum(w[:, l] * f(t, _atom_batch(a, M))
                                     for l, a in enumerate(q.atoms))
    rows = []
    for n in levels:
        law = chattering_sequence(q, n, grid).control
        v = law.values(bundle)
        row = [n]
        for name, f in test_functions.items():
            diff = np.stack([f(grid.t(i), v[:, i]) for i in range(N)], axis=1) - target[name]
            running = np.cumsum(diff, axis=1) * dt
            row.append(float(np.abs(running).mean()))
        rows.append(row)
    table = StudyTable(["level"] + list(test_functions), rows)
    table.monotone = {name: _nonincreasing(table.column(name)) for name in test_functions}
    return table


def _sq(a):
    return np.sum(a.reshape(a.shape[0], -1) ** 2, axis=1)


def chattering_convergence_study(spec: ProblemSpec, q: RelaxedControlLaw, levels: Sequence[int],
                                 bundle: BrownianBundle,
                                 config: RegressionConfig = RegressionConfig()) -> StudyTable:
    """Common-bundle comparison of chattering solutions with the relaxed one.

    Columns: ``y_moment = E max_i |y^n - y^q|^2``, ``z_moment = E sum_i
    |z^n - z^q|^2 dt``, ``cost_gap = |J(u^n) - J(q)|``, the time-integrated
    mean-square gaps of ``b_y, b_z, h_y, h_z`` between the ``u^n``
    evaluation and the weight average, and ``p_moment = E max_i |p^n - p^q|^2``.
    """
    grid = bundle.grid
    levels = _check_levels(levels, grid)
    avg = average_coefficients(spec, q)
    qlaw = q.as_control_law()
    rel = solve_bsde(avg, qlaw, bundle, config)
    J_rel = evaluate_cost(avg, qlaw, rel)
    p_rel = solve_adjoint(avg, qlaw, rel)
    wts = rel.controls
    dt = grid.dt
    names = ("b_y", "b_z", "h_y", "h_z")
    rows = []
    for n in levels:
        law = chattering_sequence(q, n, grid).control
        tr = solve_bsde(spec, law, bundle, config)
        J = evaluate_cost(spec, law, tr)
        adj = solve_adjoint(spec, law, tr)
        ym = float(_sq_path_max(tr.y - rel.y).mean())
        zm = float((np.sum((tr.z[:, :-1] - rel.z[:, :-1]) ** 2, axis=(2, 3)).sum(axis=1)
                    * dt).mean())
        pm = float(_sq_path_max(adj.p - p_rel.p).mean())
        coef = []
        for name in names:
            f, fbar = getattr(spec, name), getattr(avg, name)
            acc = np.zeros(bundle.M)
            for i in range(grid.N):
                t = grid.t(i)
                acc += _sq(f(t, tr.y_hat[:, i], tr.z[:, i], tr.controls[:, i])
                           - fbar(t, rel.y_hat[:, i], rel.z[:, i], wts[:, i])) * dt
            coef.append(float(acc.mean()))
        rows.append([n, ym, zm, abs(J.value - J_rel.value), *coef, pm, J.value, J.stderr])
    cols = ["level", "y_moment", "z_moment", "cost_gap", *(n + "_gap" for n in names),
            "p_moment", "cost", "cost_stderr"]
    table = StudyTable(cols, rows)
    table.monotone = {c: _nonincreasing(table.column(c)) for c in cols[1:-2]}
    table.meta = {"relaxed_cost": J_rel.value, "relaxed_cost_stderr": J_rel.stderr}
    return table


def _sq_path_max(diff):
    return np.sum(diff ** 2, axis=2).max(axis=1)


# ---------------------------------------------------------------------------
# necessary and sufficient conditions


def check_relaxed_necessary(spec: ProblemSpec, q: RelaxedControlLaw, traj: Trajectory,
                            adjoint: AdjointPath, atoms=None,
                            tolerance: Optional[float] = None) -> ViolationReport:
    """Gap ``max_U H - sum_l w_l H(a_l)`` along the relaxed solution.

    The maximum over probability measures is attained at a Dirac, so the
    U grid (together with the atoms of ``q``) suffices. ``support_mass`` is
    the mean weight carried by atoms within the tolerance of the maximum.
    """
    grid_atoms = maximisation_atoms(spec, atoms)
    H_grid = hamiltonian_over_atoms(spec, traj, adjoint, grid_atoms)
    H_q = hamiltonian_over_atoms(spec, traj, adjoint, q.atoms)
    W = traj.controls                        # weights (M, N, L)
    H_mu = np.einsum("mil,mil->mi", W, H_q)
    best = np.maximum(H_grid.max(axis=2), H_q.max(axis=2))
    gaps = np.maximum(best - H_mu, 0.0)
    report = gap_report(gaps, H_grid.argmax(axis=2), tolerance)
    near = H_q >= best[:, :, None] - report.tolerance
    report.extra["support_mass"] = float(np.einsum("mil,mil->mi", W, near).mean())
    return report


@dataclass
class NearOptimalityReport:
    level: int
    eps: float
    eps_raw: float
    clamped: bool
    stderr: float
    violation: ViolationReport
    ratio: float

    def to_dict(self) -> dict:
        return {"level": self.level, "eps": self.eps, "eps_raw": self.eps_raw,
                "clamped": self.clamped, "stderr": self.stderr,
                "max_gap": self.violation.max_gap, "mean_gap": self.violation.mean_gap,
                "ratio": self.ratio}


def near_optimality_check(spec: ProblemSpec, q_star: RelaxedControlLaw, levels: Sequence[int],
                          bundle: BrownianBundle,
                          config: RegressionConfig = RegressionConfig(),
                          atoms=None) -> list:
    """For each level: cost gap ``eps_n = J(u^n) - J(q*)`` and the strict
    Hamiltonian gap of ``u^n`` on its own trajectory and adjoint.

    Negative ``eps_n`` within three standard errors is clamped to 0 and
    flagged. ``ratio`` is ``max_gap / eps_n`` (inf when ``eps_n = 0``).
    """
    grid = bundle.grid
    levels = _check_levels(levels, grid)
    avg = average_coefficients(spec, q_star)
    rel = solve_bsde(avg, q_star.as_control_law(), bundle, config)
    J_rel = evaluate_cost(avg, q_star.as_control_law(), rel)
    out = []
    for n in levels:
        law = chattering_sequence(q_star, n, grid).control
        tr = solve_bsde(spec, law, bundle, config)
        J = evaluate_cost(spec, law, tr)
        adj = solve_adjoint(spec, law, tr)
        rep = check_necessary(spec, law, tr, adj, atoms)
        se = float(np.hypot(J.stderr, J_rel.stderr))
        raw = J.value - J_rel.value
        clamped = -3 * se <= raw < 0
        eps = 0.0 if clamped else raw
        ratio = rep.max_gap / eps if eps > 0 else float("inf")
        out.append(NearOptimalityReport(n, eps, raw, clamped, se, rep, ratio))
    return out


def near_optimality_summary(reports: list) -> dict:
    eps = np.array([r.eps for r in reports])
    gaps = np.array([r.violation.max_gap for r in reports])
    ratios = np.array([r.ratio for r in reports if r.eps > r.stderr])
    bounded = bool(ratios.size and ratios.max() <= 10 * ratios.min())
    return {"eps_decreasing": bool(np.all(np.diff(eps) < 0)),
            "gap_decreasing": bool(np.all(np.diff(gaps) < 0)),
            "ratio_spread": float(ratios.max() / ratios.min()) if ratios.size else float("nan"),
            "ratio_bounded": bounded}


@dataclass
class RelaxedSufficiencyReport:
    linearity_error: float
    concavity_defect: float
    g_defect: float
    tolerance: float = 1e-9
    linearity_tol: float = 1e-12

    @property
    def verdict(self) -> str:
        ok = (self.linearity_error <= self.linearity_tol
              and max(self.concavity_defect, self.g_defect) <= self.tolerance)
        return "pass" if ok else "fail"

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        return {"linearity_error": self.linearity_error,
                "concavity_defect": self.concavity_defect, "g_convexity_defect": self.g_defect,
                "tolerance": self.tolerance,
                "verdict": self.verdict}


def check_relaxed_sufficient(spec: ProblemSpec, samples: int = 1000, seed: int = 0,
                             atoms=None, p_range=(-2.0, 2.0)) -> RelaxedSufficiencyReport:
    """Linearity of the relaxed Hamiltonian in the weights (relative error
    against ``max(1, |H|)``), sampled midpoint concavity in ``(y, z)`` and
    midpoint convexity of ``g``."""
    atoms = maximisation_atoms(spec, atoms)
    L = atoms.shape[0]
    rng = np.random.default_rng(seed)
    t, y, z, _ = random_arguments(spec, samples, rng)
    _, y2, z2, _ = random_arguments(spec, samples, rng)
    p = rng.uniform(p_range[0], p_range[1], size=(samples, spec.dims.n))
    w1, w2 = rng.dirichlet(np.ones(L), size=samples), rng.dirichlet(np.ones(L), size=samples)
    a = rng.uniform(size=(samples, 1))
    Hmix = relaxed_hamiltonian(spec, t, y, z, p, a * w1 + (1 - a) * w2, atoms)
    H1 = relaxed_hamiltonian(spec, t, y, z, p, w1, atoms)
    H2 = relaxed_hamiltonian(spec, t, y, z, p, w2, atoms)
    lin = np.abs(Hmix - (a[:, 0] * H1 + (1 - a[:, 0]) * H2)) / np.maximum(1.0, np.abs(Hmix))
    Ha = relaxed_hamiltonian(spec, t, y, z, p, w1, atoms)
    Hb = relaxed_hamiltonian(spec, t, y2, z2, p, w1, atoms)
    Hm = relaxed_hamiltonian(spec, t, (y + y2) / 2, (z + z2) / 2, p, w1, atoms)
    defect = (Ha + Hb) / 2 - Hm
    g_defect = spec.g((y + y2) / 2) - (spec.g(y) + spec.g(y2)) / 2
    return RelaxedSufficiencyReport(float(lin.max()), float(defect.max()), float(g_defect.max()))
