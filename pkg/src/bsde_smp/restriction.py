"""Cost restriction: absorb the running cost into an extra BSDE component.

The auxiliary component ``x`` solves ``dx = h dt + k dW``, ``x_T = eta``. The
stacked state ``(y, x)`` is a plain (n+1)-dimensional problem with drift
``(b, h)``, no running cost and terminal cost ``g(y) - x``; its expected cost
plus ``E[eta]`` equals the original cost.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .adjoint import AdjointPath
from .core import ControlLaw, Dimensions, ProblemSpec
from .solver import CostEstimate, Trajectory, _estimate


class ReductionInvariantError(ArithmeticError):
    """Last component of a restricted adjoint drifted away from -1."""


@dataclass(frozen=True, eq=False)
class AugmentedProblem:
    base: ProblemSpec
    spec: ProblemSpec
    eta: Callable


def _zero_eta(w):
    return np.zeros(w.shape[0])


def augment_problem(spec: ProblemSpec, eta: Optional[Callable] = None) -> AugmentedProblem:
    """Build the (n+1)-dimensional restricted problem. ``eta`` maps ``W_T``
    (M, d) to (M,); the default is zero."""
    eta = _zero_eta if eta is None else eta
    n, d, k = spec.dims.n, spec.dims.d, spec.dims.k

    def b(t, Y, Z, v):
        y, z = Y[:, :n], Z[:, :n]
        return np.concatenate([spec.b(t, y, z, v), spec.h(t, y, z, v)[:, None]], axis=1)

    def b_y(t, Y, Z, v):
        y, z = Y[:, :n], Z[:, :n]
        out = np.zeros((Y.shape[0], n + 1, n + 1))
        out[:, :n, :n] = spec.b_y(t, y, z, v)
        out[:, n, :n] = spec.h_y(t, y, z, v)
        return out

    def b_z(t, Y, Z, v):
        y, z = Y[:, :n], Z[:, :n]
        out = np.zeros((Y.shape[0], n + 1, n + 1, d))
        out[:, :n, :n] = spec.b_z(t, y, z, v)
        out[:, n, :n] = spec.h_z(t, y, z, v)
        return out

    def h(t, Y, Z, v):
        return np.zeros(Y.shape[0])

    def h_y(t, Y, Z, v):
        return np.zeros_like(Y)

    def h_z(t, Y, Z, v):
        return np.zeros_like(Z)

    def g(Y):
        return spec.g(Y[:, :n]) - Y[:, n]

    def g_y(Y):
        return np.concatenate([spec.g_y(Y[:, :n]), -np.ones((Y.shape[0], 1))], axis=1)

    def xi(w):
        return np.concatenate([spec.xi(w), eta(w)[:, None]], axis=1)

    aug = ProblemSpec(dims=Dimensions(n + 1, d, k), b=b, b_y=b_y, b_z=b_z, h=h, h_y=h_y,
                      h_z=h_z, g=g, g_y=g_y, xi=xi, control_set=spec.control_set,
                      name=spec.name + "~", metadata={"augmented_from": spec.name})
    return AugmentedProblem(spec, aug, eta)


def restricted_cost(aug: AugmentedProblem, control: ControlLaw,
                    aug_traj: Trajectory) -> CostEstimate:
    """``E[g(y_0) - x_0] + E[eta]`` estimated on the augmented trajectory."""
    n = aug.base.dims.n
    y0 = aug_traj.y[:, 0]
    per_path = aug.base.g(y0[:, :n]) - y0[:, n] + aug.eta(aug_traj.bundle.W[:, -1])
    return _estimate(per_path)


def reduce_adjoint(p_aug: AdjointPath, dims: Dimensions, tol: float = 1e-10) -> AdjointPath:
    """Project a restricted adjoint ``(p, -1)`` onto its first ``n`` components."""
    p = p_aug.p
    if p.shape[2] != dims.n + 1:
        raise ValueError(f"expected {dims.n + 1} adjoint components, got {p.shape[2]}")
    drift = np.abs(p[:, :, dims.n] + 1.0)
    if drift.max() > tol:
        m, i = np.unravel_index(np.argmax(drift), drift.shape)
        raise ReductionInvariantError(
            f"last adjoint component is {p[m, i, dims.n]:.6g} at path {m}, index {i}; expected -1")
    return AdjointPath(p[:, :, : dims.n].copy(), p_aug.bundle, p_aug.label)
