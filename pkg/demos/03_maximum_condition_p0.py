"""The strict maximum condition on the deterministic trade-off problem P0.

The enumeration oracle finds the best 8-block control; the Hamiltonian gap
along its own discrete trajectory is small but not zero, while constant
controls violate the condition by orders of magnitude.

    python demos/03_maximum_condition_p0.py
"""
from bsde_smp import (Dimensions, TimeGrid, brute_force_optimum, check_necessary,
                      constant_control, get_problem, improve_by_hamiltonian_ascent,
                      sample_brownian, solve_adjoint, solve_bsde)

spec = get_problem("P0").spec
dims = Dimensions(1, 1, 1)

for B in (4, 8):
    grid = TimeGrid(1.0, B)
    orc = brute_force_optimum(spec, B, grid=grid)
    bundle = sample_brownian(grid, dims, 2000, seed=7)
    traj = solve_bsde(spec, orc.control, bundle)
    rep = check_necessary(spec, orc.control, traj, solve_adjoint(spec, orc.control, traj))
    print(f"B={B}: oracle {orc.pattern[:, 0].tolist()} value {orc.value:.5f}; "
          f"mean gap {rep.mean_gap:.4f} (tol {rep.tolerance:g}) -> {rep.verdict}")

grid = TimeGrid(1.0, 64)
bundle = sample_brownian(grid, dims, 2000, seed=7)
for v in (-1.0, 0.0, 1.0):
    u = constant_control(v, spec.control_set)
    traj = solve_bsde(spec, u, bundle)
    rep = check_necessary(spec, u, traj, solve_adjoint(spec, u, traj))
    print(f"{u.label}: mean gap {rep.mean_gap:.4f} -> {rep.verdict}")

# Plain argmax iteration overshoots into a bang-bang cycle on this problem.
res = improve_by_hamiltonian_ascent(spec, constant_control(0.0, spec.control_set), bundle)
print("ascent costs:", [round(c.value, 4) for c in res.costs], res.warnings)
