"""Optimal control of backward SDEs: a least-squares Monte Carlo solver and
empirical checks of the stochastic maximum principle in strict, restricted
and relaxed form."""
from .adjoint import (AdjointPath, hamiltonian, hamiltonian_partials, hamiltonian_on_path,
                      hamiltonian_over_atoms, solve_adjoint)
from .core import (BrownianBundle, ConfigurationError, ControlLaw, ControlSet, Dimensions,
                   DivergenceError, GradientMismatchError, ProblemSpec, TimeGrid, build_grid,
                   constant_control, control_distance, sample_brownian, schedule_control,
                   validate_spec)
from .io import __version__
from .maximum_principle import (SpikeSpec, ViolationReport, check_necessary,
                                check_sufficient_assumptions, improve_by_hamiltonian_ascent,
                                spike_convergence_study, spike_perturb)
from .problems import (PROBLEM_NAMES, OracleBudgetError, OracleInapplicableError,
                       analytic_solution, brute_force_optimum, get_problem)
from .relaxed import (RelaxedControlLaw, average_coefficients, chattering_convergence_study,
                      chattering_sequence, check_relaxed_necessary, check_relaxed_sufficient,
                      constant_weights, embed_strict, near_optimality_check,
                      relaxed_cost, relaxed_hamiltonian, solve_relaxed_adjoint,
                      solve_relaxed_bsde, stable_convergence_diagnostic)
from .restriction import (ReductionInvariantError, augment_problem, reduce_adjoint,
                          restricted_cost)
from .solver import (CostEstimate, RegressionConfig, RegressionError, Trajectory,
                     evaluate_cost, regress, solve_bsde)
