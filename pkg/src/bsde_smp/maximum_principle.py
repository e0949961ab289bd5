"""Spike variations, the strict maximum condition and its sufficiency
hypotheses, and a Hamiltonian-ascent improvement loop."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .adjoint import (AdjointPath, hamiltonian, hamiltonian_on_path, hamiltonian_over_atoms,
                      solve_adjoint)
from .core import (BrownianBundle, ConfigurationError, ControlLaw, ControlSet, ProblemSpec,
                   TimeGrid, control_distance, random_arguments)
from .restriction import augment_problem
from .solver import (CostEstimate, PolynomialFit, RegressionConfig, Trajectory,
                     evaluate_cost, solve_bsde)

GAP_TOL_FLOOR = 1e-3


@dataclass(frozen=True)
class SpikeSpec:
    tau: float
    theta: float
    value: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "value", np.atleast_1d(np.asarray(self.value, dtype=float)))
        if self.tau < 0 or self.theta <= 0:
            raise ConfigurationError(f"spike needs tau >= 0 and theta > 0, got {self}")


def spike_perturb(control: ControlLaw, spike: SpikeSpec, grid: TimeGrid) -> ControlLaw:
    """Law equal to ``spike.value`` on nodes in ``[tau, tau + theta)`` and to
    ``control`` elsewhere."""
    if not np.all(control.control_set.contains(spike.value)):
        raise ConfigurationError(f"spike value {spike.value} is not in U")
    nodes = grid.nodes
    eps = 1e-12 * max(1.0, grid.T)
    inside = (nodes >= spike.tau - eps) & (nodes < spike.tau + spike.theta - eps)
    value = spike.value.copy()

    def fn(i, w):
        if inside[i]:
            return np.broadcast_to(value, (w.shape[0], value.size))
        return control.fn(i, w)

    label = (f"{control.label}|spike(tau={spike.tau:g},theta={spike.theta:g},"
             f"v={','.join(f'{x:+g}' for x in value)})")
    return ControlLaw(fn, control.control_set, label, control.time_only, control.path_dependent)


# ---------------------------------------------------------------------------


@dataclass
class SpikeStudy:
    thetas: np.ndarray
    y_moments: np.ndarray
    z_moments: np.ndarray
    y_slope: float
    z_slope: float

    def rows(self):
        return list(zip(self.thetas.tolist(), self.y_moments.tolist(), self.z_moments.tolist()))

    def summary(self) -> dict:
        return {"y_slope": self.y_slope, "z_slope": self.z_slope}


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x`` (nan if any y <= 0)."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if np.any(y <= 0):
        return float("nan")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def spike_convergence_study(spec: ProblemSpec, control: ControlLaw, tau: float, value,
                            thetas: Sequence[float], bundle: BrownianBundle,
                            config: RegressionConfig = RegressionConfig(),
                            eta=None) -> SpikeStudy:
    """Solve the restricted (augmented) system under ``control`` and under
    each spike perturbation on the same bundle and tabulate

        E max_i |y~^theta_i - y~_i|^2    and    E sum_i |z~^theta_i - z~_i|^2 dt

    together with their log-log slopes against ``theta``.
    """
    grid = bundle.grid
    thetas = np.asarray(sorted(thetas, reverse=True), dtype=float)
    if thetas.size < 3:
        raise ConfigurationError("spike study needs at least three theta values")
    for th in thetas:
        steps = th / grid.dt
        if abs(steps - round(steps)) > 1e-9 or round(steps) < 1:
            raise ConfigurationError(f"theta={th:g} is not a multiple of dt={grid.dt:g}")
        if tau + th > grid.T + 1e-12:
            raise ConfigurationError(f"spike [{tau:g}, {tau + th:g}] leaves [0, T]")
    aug = augment_problem(spec, eta)
    base = solve_bsde(aug.spec, control, bundle, config)
    ym, zm = [], []
    for th in thetas:
        law = spike_perturb(control, SpikeSpec(tau, th, value), grid)
        pert = solve_bsde(aug.spec, law, bundle, config)
        dy = np.sum((pert.y - base.y) ** 2, axis=2).max(axis=1)
        dz = np.sum((pert.z[:, :-1] - base.z[:, :-1]) ** 2, axis=(2, 3)).sum(axis=1) * grid.dt
        ym.append(float(dy.mean()))
        zm.append(float(dz.mean()))
    ym, zm = np.array(ym), np.array(zm)
    return SpikeStudy(thetas, ym, zm, loglog_slope(thetas, ym), loglog_slope(thetas, zm))


# ---------------------------------------------------------------------------


@dataclass
class ViolationReport:
    """Statistics of ``gap = max_U H - H(current)`` over nodes ``i < N`` and paths."""
    mean_gap: float
    max_gap: float
    quantiles: dict
    worst: list               # per node: (i, m, argmax atom index)
    tolerance: float
    stderr: float
    verdict: str
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        out = {"mean_gap": self.mean_gap, "max_gap": self.max_gap,
               "quantiles": self.quantiles, "tolerance": self.tolerance,
               "stderr": self.stderr, "verdict": self.verdict,
               "worst": [list(w) for w in self.worst]}
        out.update(self.extra)
        return out


def gap_report(gaps: np.ndarray, argmax: np.ndarray, tolerance: Optional[float],
               extra: Optional[dict] = None) -> ViolationReport:
    """Summarise a (M, N) array of non-negative gaps."""
    M = gaps.shape[0]
    per_path = gaps.mean(axis=1)
    stderr = float(per_path.std(ddof=1) / np.sqrt(M)) if M > 1 else 0.0
    tol = max(GAP_TOL_FLOOR, 3.0 * stderr) if tolerance is None else float(tolerance)
    q = np.quantile(gaps, [0.5, 0.9, 0.99])
    q = np.maximum.accumulate(q)
    worst_m = np.argmax(gaps, axis=0)
    worst = [(int(i), int(m), int(argmax[m, i])) for i, m in enumerate(worst_m)]
    mean_gap = float(gaps.mean())
    verdict = "pass" if (mean_gap <= tol and q[2] <= 3 * tol) else "fail"
    return ViolationReport(mean_gap, float(gaps.max()), {"50": float(q[0]), "90": float(q[1]),
                                                         "99": float(q[2])},
                           worst, tol, stderr, verdict, extra or {})


def maximisation_atoms(spec: ProblemSpec, atoms=None) -> np.ndarray:
    a = spec.control_set.grid() if atoms is None else np.asarray(atoms, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.shape[0] == 0:
        raise ConfigurationError("empty U grid")
    return a


def check_necessary(spec: ProblemSpec, control: ControlLaw, traj: Trajectory,
                    adjoint: AdjointPath, atoms=None,
                    tolerance: Optional[float] = None) -> ViolationReport:
    """Empirical check of ``H(u) = max_U H`` along ``(traj, adjoint)``.

    Passes when the mean gap is at most ``tolerance`` and the 99% quantile at
    most three times it; the default tolerance is
    ``max(1e-3, 3 * stderr of the mean gap)``.
    """
    atoms = maximisation_atoms(spec, atoms)
    v = control.values(traj.bundle)
    H_atoms = hamiltonian_over_atoms(spec, traj, adjoint, atoms)
    H_u = hamiltonian_on_path(spec, traj, adjoint, v)
    best = np.maximum(H_atoms.max(axis=2), H_u)
    gaps = best - H_u
    return gap_report(gaps, H_atoms.argmax(axis=2), tolerance)


# ---------------------------------------------------------------------------


@dataclass
class SufficiencyReport:
    g_defect: float
    h_defect: float
    control_set_convex: bool
    tolerance: float
    extra: dict = field(default_factory=dict)

    @property
    def worst_defect(self) -> float:
        return max(self.g_defect, self.h_defect)

    @property
    def verdict(self) -> str:
        return "pass" if self.worst_defect <= self.tolerance else "fail"

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        out = {"g_convexity_defect": self.g_defect, "H_concavity_defect": self.h_defect,
               "worst_defect": self.worst_defect, "control_set_convex": self.control_set_convex,
               "tolerance": self.tolerance, "verdict": self.verdict}
        out.update(self.extra)
        return out


def check_sufficient_assumptions(spec: ProblemSpec, samples: int = 1000, seed: int = 0,
                                 control_set: Optional[ControlSet] = None,
                                 p_range=(-2.0, 2.0), tol: float = 1e-9) -> SufficiencyReport:
    """Sampled midpoint convexity of ``g`` and midpoint concavity of
    ``(y, z, v) -> H(t, y, z, p, v)``.

    Defects are signed so that positive values violate the hypothesis.
    """
    cs = spec.control_set if control_set is None else control_set
    rng = np.random.default_rng(seed)
    n = spec.dims.n
    y1, y2 = rng.normal(scale=2.0, size=(2, samples, n))
    g_defect = spec.g((y1 + y2) / 2) - (spec.g(y1) + spec.g(y2)) / 2
    t, ya, za, _ = random_arguments(spec, samples, rng)
    _, yb, zb, _ = random_arguments(spec, samples, rng)
    va, vb = cs.sample(rng, samples), cs.sample(rng, samples)
    p = rng.uniform(p_range[0], p_range[1], size=(samples, n))
    Ha = hamiltonian(spec, t, ya, za, p, va)
    Hb = hamiltonian(spec, t, yb, zb, p, vb)
    Hm = hamiltonian(spec, t, (ya + yb) / 2, (za + zb) / 2, p, (va + vb) / 2)
    h_defect = (Ha + Hb) / 2 - Hm
    return SufficiencyReport(float(g_defect.max()), float(h_defect.max()), cs.is_convex, tol)


# ---------------------------------------------------------------------------


@dataclass
class AscentResult:
    controls: list
    costs: list
    distances: list
    converged: bool
    warnings: list


def _argmax_law(spec, traj, adj, atoms, config, label) -> ControlLaw:
    grid = traj.grid
    H = hamiltonian_over_atoms(spec, traj, adj, atoms)      # (M, N, L)
    tables = []
    for i in range(grid.N):
        Hi = H[:, i]
        spread = np.ptp(Hi, axis=0).max()
        if spread <= 1e-12 * (1.0 + np.abs(Hi).max()):
            tables.append(("const", int(np.argmax(Hi[0]))))
        else:
            fit = PolynomialFit(traj.bundle.W[:, i], config)
            tables.append(("fit", fit.model(Hi)))
    time_only = all(kind == "const" for kind, _ in tables)
    atoms = atoms.copy()

    def fn(i, w):
        kind, obj = tables[min(i, grid.N - 1)]
        if kind == "const":
            return atoms[obj]
        return atoms[np.argmax(obj(w), axis=1)]

    return ControlLaw(fn, spec.control_set, label, time_only=time_only)


def improve_by_hamiltonian_ascent(spec: ProblemSpec, initial: ControlLaw,
                                  bundle: BrownianBundle,
                                  config: RegressionConfig = RegressionConfig(),
                                  iterations: int = 10, atoms=None) -> AscentResult:
    """Fixed-point iteration ``u <- argmax_U H(., u)``.

    The argmax at each node is taken over regression fits of the per-atom
    Hamiltonian on ``W_{t_i}``, so every iterate is again a feedback law;
    ties go to the lowest atom index. Costs are reported, not guaranteed to
    decrease. A period-2 cycle stops the loop with a warning.
    """
    atoms = maximisation_atoms(spec, atoms)
    grid = bundle.grid
    u = initial
    controls, costs, distances, notes = [u], [], [], []
    previous = None
    converged = False
    for it in range(iterations):
        traj = solve_bsde(spec, u, bundle, config)
        costs.append(evaluate_cost(spec, u, traj))
        if atoms.shape[0] == 1:
            converged = True
            break
        adj = solve_adjoint(spec, u, traj)
        nxt = _argmax_law(spec, traj, adj, atoms, config, f"ascent[{it + 1}]")
        dist = control_distance(nxt, u, grid, bundle)
        distances.append(dist)
        if dist == 0:
            converged = True
            break
        if previous is not None and control_distance(nxt, previous, grid, bundle) == 0:
            msg = f"period-2 cycle detected at iteration {it + 1}"
            notes.append(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
            break
        previous, u = u, nxt
        controls.append(u)
    else:
        traj = solve_bsde(spec, u, bundle, config)
        costs.append(evaluate_cost(spec, u, traj))
    if len(costs) < len(controls):
        traj = solve_bsde(spec, controls[-1], bundle, config)
        costs.append(evaluate_cost(spec, controls[-1], traj))
    return AscentResult(controls, costs, distances, converged, notes)
