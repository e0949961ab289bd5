"""Absorb the running cost into an extra component and measure how fast a
spike perturbation's effect vanishes with its width.

    python demos/02_restriction_and_spikes.py
"""
import numpy as np

from bsde_smp import (Dimensions, TimeGrid, augment_problem, constant_control, evaluate_cost,
                      get_problem, restricted_cost, sample_brownian, solve_bsde,
                      spike_convergence_study)

spec = get_problem("P1").spec
grid = TimeGrid(1.0, 64)
bundle = sample_brownian(grid, Dimensions(1, 1, 1), 20000, seed=7)

aug = augment_problem(spec)
for v in (-1.0, 0.0, 1.0):
    u = constant_control(v, spec.control_set)
    J = evaluate_cost(spec, u, solve_bsde(spec, u, bundle))
    J_aug = restricted_cost(aug, u, solve_bsde(aug.spec, u, bundle))
    print(f"{u.label}: J = {J.value:.6f} +- {J.stderr:.4f}   restricted {J_aug.value:.6f}")

thetas = [0.25, 0.125, 0.0625, 0.03125]
study = spike_convergence_study(spec, constant_control(0.0, spec.control_set), 0.5, 1.0,
                                thetas, bundle)
print("\n theta     E sup|dy|^2   E int|dz|^2")
for th, ym, zm in study.rows():
    print(f"{th:7.5f}   {ym:.3e}     {zm:.3e}")
print(f"log-log slopes: y {study.y_slope:.3f}, z {study.z_slope:.3f} (theory: 2)")
