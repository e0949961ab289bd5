"""Command-line front end.

Every command writes its artifacts into ``--out`` (default ``./out``) with
an embedded ``meta`` block and prints a short summary. Exit codes: 0 when
all verdicts pass, 1 when any verdict fails (or the numerics break down),
2 on configuration errors.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
import warnings
from pathlib import Path

import numpy as np

from . import io as art
from .acceptance import REGISTRY, restriction_comparison, run_suite
from .adjoint import solve_adjoint
from .core import (ConfigurationError, ControlLaw, ControlSet, DivergenceError,
                   GradientMismatchError, TimeGrid, constant_control, sample_brownian)
from .maximum_principle import (check_necessary, improve_by_hamiltonian_ascent,
                                spike_convergence_study)
from .problems import (PROBLEM_NAMES, OracleBudgetError, OracleInapplicableError,
                       brute_force_optimum, get_problem)
from .relaxed import (RelaxedControlLaw, chattering_convergence_study, check_relaxed_necessary,
                      constant_weights, embed_strict, solve_relaxed_adjoint,
                      solve_relaxed_bsde, stable_convergence_diagnostic)
from .solver import RegressionConfig, RegressionError, evaluate_cost, solve_bsde

COMMANDS = ("solve", "adjoint", "check", "check-relaxed", "spike-study", "chattering-study",
            "stable-study", "improve", "oracle", "restrict-verify", "suite")


def _floats(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigurationError(f"cannot parse number list {text!r}") from None


def _ints(text: str) -> list:
    vals = _floats(text)
    if any(v != int(v) for v in vals):
        raise ConfigurationError(f"expected integers, got {text!r}")
    return [int(v) for v in vals]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bsde-smp", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--problem", default="P1", help=f"one of {', '.join(PROBLEM_NAMES)}")
    common.add_argument("--control", default="builtin",
                        help="builtin | const:v | oracle | dirac:v | mix:w1,w2,...")
    common.add_argument("--grid", type=int, default=None,
                        help="time steps N (default 64; 512 for the level studies)")
    common.add_argument("--paths", type=int, default=20000, help="Monte Carlo paths M")
    common.add_argument("--seed", type=int, default=7)
    common.add_argument("--degree", type=int, default=3, help="regression basis degree D")
    common.add_argument("--ridge", type=float, default=None, help="ridge lambda (default: auto)")
    common.add_argument("--resolution", type=int, default=None,
                        help="grid resolution for box control sets")
    common.add_argument("--thetas", default="0.25,0.125,0.0625,0.03125")
    common.add_argument("--tau", type=float, default=0.5)
    common.add_argument("--spike-value", type=float, default=1.0)
    common.add_argument("--levels", default="4,16,64")
    common.add_argument("--blocks", type=int, default=8, help="oracle blocks B")
    common.add_argument("--substeps", type=int, default=16, help="oracle RK4 steps per block")
    common.add_argument("--iterations", type=int, default=10)
    common.add_argument("--tol", type=float, default=None, help="override check tolerance")
    common.add_argument("--out", default="out")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--export-paths", type=int, default=64,
                        help="paths written to trajectory/adjoint CSV")
    common.add_argument("--criteria", default=None, help="suite: comma list of criterion ids")
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return ap


# ---------------------------------------------------------------------------


LEVEL_STUDIES = ("chattering-study", "stable-study")


class Run:
    """Parsed flags plus the problem, grid, bundle and config they imply."""

    def __init__(self, args):
        if args.grid is None:
            # level n needs several nodes per block; n = N collapses to one atom
            args.grid = 512 if args.command in LEVEL_STUDIES else 64
        self.args = args
        if args.grid < 1 or args.paths < 2 or args.workers < 1 or args.export_paths < 0:
            raise ConfigurationError("grid >= 1, paths >= 2, workers >= 1, export-paths >= 0")
        self.config = RegressionConfig(args.degree, args.ridge)
        self.problem = get_problem(args.problem)
        spec = self.problem.spec
        if args.resolution is not None:
            cs = spec.control_set
            if cs.kind != "box":
                raise ConfigurationError("--resolution applies to box control sets only")
            spec = dataclasses.replace(spec, control_set=ControlSet.box(cs.lo, cs.hi,
                                                                        args.resolution))
        self.spec = spec
        self.grid = TimeGrid(self.problem.T, args.grid)
        self.out = Path(args.out)
        self._bundle = None
        self.notes = []

    def use_grid(self, N: int, why: str):
        if N != self.grid.N:
            self.grid = TimeGrid(self.problem.T, N)
            self._bundle = None
            self.notes.append(why)

    @property
    def bundle(self):
        if self._bundle is None:
            self._bundle = sample_brownian(self.grid, self.spec.dims, self.args.paths,
                                           self.args.seed, self.args.workers)
        return self._bundle

    def meta(self, **extra) -> dict:
        extra.setdefault("problem", self.problem.name)
        if self.notes:
            extra["notes"] = list(self.notes)
        return art.run_meta(self.args.seed, self.grid.N, self.args.paths, self.config, **extra)

    def oracle(self):
        return brute_force_optimum(self.spec, self.args.blocks, substeps=self.args.substeps,
                                   T=self.problem.T, grid=self.grid)

    def strict_control(self) -> ControlLaw:
        text = self.args.control
        cs = self.spec.control_set
        if text == "builtin":
            atoms = cs.grid()
            return constant_control(atoms[len(atoms) // 2], cs)
        if text == "oracle":
            return self.oracle().control
        kind, _, rest = text.partition(":")
        if kind in ("const", "dirac") and rest:
            return constant_control(_floats(rest), cs)
        raise ConfigurationError(f"control {text!r} is not a strict control")

    def relaxed_control(self) -> RelaxedControlLaw:
        text = self.args.control
        cs = self.spec.control_set
        atoms = cs.grid()
        if text == "builtin":
            return constant_weights(atoms, np.full(len(atoms), 1.0 / len(atoms)), cs)
        kind, _, rest = text.partition(":")
        if kind == "mix":
            w = _floats(rest)
            if len(w) != len(atoms):
                raise ConfigurationError(f"mix needs {len(atoms)} weights, got {len(w)}")
            w = np.asarray(w)
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ConfigurationError(f"weights {rest} are not a probability vector")
            return constant_weights(atoms, w, cs)
        return embed_strict(self.strict_control(), atoms)


def _csv(run, name, header, rows, **meta):
    return art.write_csv(run.out / name, header, rows, run.meta(**meta))


def _json(run, name, payload, **meta):
    return art.write_json(run.out / name, payload, run.meta(**meta))


def cmd_solve(run):
    u = run.strict_control()
    tr = solve_bsde(run.spec, u, run.bundle, run.config)
    cost = evaluate_cost(run.spec, u, tr)
    header, rows = art.trajectory_rows(tr, run.args.export_paths)
    _csv(run, "trajectory.csv", header, rows, control=u.label)
    _json(run, "cost.json", {"control": u.label, "cost": cost.to_dict()}, control=u.label)
    print(f"{run.problem.name} {u.label}: J = {cost.value:.10g} +- {cost.stderr:.3g}")
    return 0


def cmd_adjoint(run):
    u = run.strict_control()
    tr = solve_bsde(run.spec, u, run.bundle, run.config)
    adj = solve_adjoint(run.spec, u, tr)
    header, rows = art.adjoint_rows(adj, run.args.export_paths)
    _csv(run, "adjoint.csv", header, rows, control=u.label)
    print(f"{run.problem.name} {u.label}: p_0 mean = {adj.p[:, 0].mean(axis=0)}")
    return 0


def cmd_check(run):
    if run.args.control == "oracle":
        run.use_grid(run.args.blocks, "grid set to the oracle's block resolution")
    u = run.strict_control()
    tr = solve_bsde(run.spec, u, run.bundle, run.config)
    rep = check_necessary(run.spec, u, tr, solve_adjoint(run.spec, u, tr),
                          tolerance=run.args.tol)
    _json(run, "check.json", {"control": u.label, **rep.to_dict()}, control=u.label)
    print(f"{run.problem.name} {u.label}: mean gap {rep.mean_gap:.6g}, "
          f"q99 {rep.quantiles['99']:.6g}, tol {rep.tolerance:.3g} -> {rep.verdict}")
    return 0 if rep.passed else 1


def cmd_check_relaxed(run):
    q = run.relaxed_control()
    tr = solve_relaxed_bsde(run.spec, q, run.bundle, run.config)
    rep = check_relaxed_necessary(run.spec, q, tr, solve_relaxed_adjoint(run.spec, q, tr),
                                  tolerance=run.args.tol)
    _json(run, "check_relaxed.json", {"control": q.label, **rep.to_dict()}, control=q.label)
    print(f"{run.problem.name} {q.label}: mean gap {rep.mean_gap:.6g}, "
          f"support mass {rep.extra['support_mass']:.4f} -> {rep.verdict}")
    return 0 if rep.passed else 1


def cmd_spike_study(run):
    u = run.strict_control()
    st = spike_convergence_study(run.spec, u, run.args.tau, run.args.spike_value,
                                 _floats(run.args.thetas), run.bundle, run.config)
    extra = dict(control=u.label, tau=run.args.tau, spike_value=run.args.spike_value)
    _csv(run, "spike_study.csv", ["theta", "y_moment", "z_moment"], st.rows(), **extra)
    _json(run, "spike_study.json", st.summary(), **extra)
    print(f"y slope {st.y_slope:.4f}, z slope {st.z_slope:.4f}")
    return 0


def cmd_chattering_study(run):
    q = run.relaxed_control()
    tab = chattering_convergence_study(run.spec, q, _ints(run.args.levels), run.bundle,
                                       run.config)
    head = ["level", "y_moment", "z_moment", "cost_gap"]
    _csv(run, "chattering_study.csv", head, [r[:4] for r in tab.rows], control=q.label)
    _json(run, "chattering_study.json",
          {"columns": tab.columns, "rows": tab.rows, "monotone": tab.monotone, **tab.meta},
          control=q.label)
    for r in tab.rows:
        print("n=%-4d y %.3e  z %.3e  cost gap %.3e" % tuple(r[:4]))
    return 0 if all(tab.monotone[c] for c in head[1:]) else 1


def cmd_stable_study(run):
    q = run.relaxed_control()
    fns = {f"a_{j + 1}": (lambda t, a, j=j: a[:, j]) for j in range(run.spec.dims.k)}
    fns["one"] = lambda t, a: np.ones(a.shape[0])
    tab = stable_convergence_diagnostic(q, _ints(run.args.levels), fns, run.grid, run.bundle)
    _csv(run, "stable_study.csv", tab.columns, tab.rows, control=q.label)
    for r in tab.rows:
        print("n=%-4d " % r[0] + "  ".join(f"{c} {v:.3e}" for c, v in zip(tab.columns[1:], r[1:])))
    return 0 if all(tab.monotone.values()) else 1


def cmd_improve(run):
    u = run.strict_control()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = improve_by_hamiltonian_ascent(run.spec, u, run.bundle, run.config,
                                            run.args.iterations)
    payload = {"labels": [c.label for c in res.controls],
               "costs": [c.to_dict() for c in res.costs], "distances": res.distances,
               "converged": res.converged, "warnings": res.warnings}
    _json(run, "improve.json", payload, control=u.label)
    for lab, c in zip(payload["labels"], res.costs):
        print(f"{lab}: J = {c.value:.8g}")
    for w in res.warnings:
        print("warning:", w, file=sys.stderr)
    return 0


def cmd_oracle(run):
    orc = run.oracle()
    art.write_json(run.out / "oracle.json", orc.to_dict(run.problem.name),
                   run.meta(blocks=orc.blocks, substeps=run.args.substeps))
    print(f"{run.problem.name} oracle (B={orc.blocks}, {orc.candidates} candidates): "
          f"value {orc.value:.10g}, pattern {orc.pattern[:, 0].tolist()}")
    return 0


def cmd_restrict_verify(run):
    u = run.strict_control()
    row = restriction_comparison(run.spec, u, run.bundle, run.config)
    _json(run, "restrict_verify.json", row, control=u.label)
    print(f"J = {row['J']:.10g}, J restricted = {row['J_restricted']:.10g}, "
          f"|diff| {abs(row['diff']):.3g} <= {row['bound']:.3g}: {row['passed']}")
    return 0 if row["passed"] else 1


def cmd_suite(run):
    ids = None if run.args.criteria is None else set(_ints(run.args.criteria))
    if ids is not None and not ids <= {c.id for c in REGISTRY}:
        raise ConfigurationError(f"unknown criteria {sorted(ids)}")
    results = run_suite(run.args.seed, run.args.workers, ids, run.config, echo=print)
    meta = art.run_meta(run.args.seed, 64, 20000, run.config,
                        note="per-criterion N and M are recorded in the criterion details")
    art.write_json(run.out / "suite.json", {"results": [r.to_dict() for r in results]}, meta)
    art.atomic_write(run.out / "suite.txt", "".join(r.line() + "\n" for r in results))
    failed = [r.id for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria pass")
    return 1 if failed else 0


HANDLERS = {name: globals()["cmd_" + name.replace("-", "_")] for name in COMMANDS}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return HANDLERS[args.command](Run(args))
    except (ConfigurationError, OracleInapplicableError, OracleBudgetError,
            GradientMismatchError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (RegressionError, DivergenceError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
