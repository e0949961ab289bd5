"""Relaxed control on P2: the half-half mixture of +-1 has cost zero, no
strict control attains it, and chattering schedules approach it.

    python demos/04_chattering_p2.py
"""
from bsde_smp import (Dimensions, TimeGrid, chattering_convergence_study, check_relaxed_necessary,
                      constant_weights, get_problem, near_optimality_check, sample_brownian,
                      solve_relaxed_adjoint, solve_relaxed_bsde, stable_convergence_diagnostic)
from bsde_smp.relaxed import near_optimality_summary

spec = get_problem("P2").spec
grid = TimeGrid(1.0, 512)
bundle = sample_brownian(grid, Dimensions(1, 1, 1), 2000, seed=7)
mu = constant_weights([-1.0, 1.0], [0.5, 0.5], spec.control_set)

traj = solve_relaxed_bsde(spec, mu, bundle)
rep = check_relaxed_necessary(spec, mu, traj, solve_relaxed_adjoint(spec, mu, traj))
print(f"relaxed maximum condition: {rep.verdict}, support mass {rep.extra['support_mass']}")

levels = [4, 16, 64]
tab = chattering_convergence_study(spec, mu, levels, bundle)
print("\n  n   y_moment    cost       p_moment")
for r in tab.rows:
    row = dict(zip(tab.columns, r))
    print(f"{row['level']:3d}  {row['y_moment']:.3e}  {row['cost']:.3e}  {row['p_moment']:.3e}")
print("expected cost T^3/(12 n^2):", [f"{1 / (12 * n * n):.3e}" for n in levels])

stab = stable_convergence_diagnostic(mu, levels, {"a": lambda t, a: a[:, 0]}, grid, bundle)
print("\nstable-convergence gap for f(t, a) = a:", stab.column("a").tolist(), "(T/(4n))")

reps = near_optimality_check(spec, mu, levels, bundle)
for r in reps:
    print(f"n={r.level:3d}: eps {r.eps:.3e}  max gap {r.violation.max_gap:.3e}  "
          f"ratio {r.ratio:.1f}")
print(near_optimality_summary(reps))
# eps_n ~ 1/n^2 while the Hamiltonian gap ~ 1/n, so the ratio grows linearly.
