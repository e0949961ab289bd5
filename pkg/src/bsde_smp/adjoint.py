"""Hamiltonian ``H = p.b - h`` and the forward adjoint SDE."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BrownianBundle, ControlLaw, DivergenceError, ProblemSpec
from .solver import Trajectory


@dataclass(eq=False)
class AdjointPath:
    """Adjoint values ``p`` of shape (M, N+1, n) on the trajectory's bundle."""
    p: np.ndarray
    bundle: BrownianBundle
    label: str = ""

    @property
    def grid(self):
        return self.bundle.grid


def hamiltonian(spec: ProblemSpec, t, y, z, p, v) -> np.ndarray:
    """``p . b(t, y, z, v) - h(t, y, z, v)`` for batched arguments."""
    return np.einsum("mi,mi->m", p, spec.b(t, y, z, v)) - spec.h(t, y, z, v)


def hamiltonian_partials(spec: ProblemSpec, t, y, z, p, v):
    """``(H_y, H_z)`` with ``H_y = b_y^T p - h_y`` and
    ``H_z[j, l] = sum_r p_r db_r/dz_jl - dh/dz_jl``."""
    H_y = np.einsum("mrj,mr->mj", spec.b_y(t, y, z, v), p) - spec.h_y(t, y, z, v)
    H_z = np.einsum("mrjl,mr->mjl", spec.b_z(t, y, z, v), p) - spec.h_z(t, y, z, v)
    return H_y, H_z


def solve_adjoint(spec: ProblemSpec, control: ControlLaw, traj: Trajectory,
                  bundle: BrownianBundle = None, controls=None) -> AdjointPath:
    """Euler-Maruyama for ``-dp = H_y dt + H_z dW``, ``p_0 = g_y(y_0)``,
    driven by the bundle's own increments.

    ``controls`` (M, N, k) overrides evaluation of ``control``; the relaxed
    module passes weight vectors through it.
    """
    bundle = traj.bundle if bundle is None else bundle
    grid = bundle.grid
    M, N, dt = bundle.M, grid.N, grid.dt
    v_all = control.values(bundle) if controls is None else controls
    p = np.empty((M, N + 1, spec.dims.n))
    p[:, 0] = spec.g_y(traj.y[:, 0])
    for i in range(N):
        H_y, H_z = hamiltonian_partials(spec, grid.t(i), traj.y_hat[:, i], traj.z[:, i],
                                        p[:, i], v_all[:, i])
        p[:, i + 1] = (p[:, i] - H_y * dt
                       - np.einsum("mjl,ml->mj", H_z, bundle.dW[:, i]))
        bad = ~np.isfinite(p[:, i + 1]).all(axis=1)
        if bad.any():
            raise DivergenceError("adjoint", i + 1, int(np.flatnonzero(bad)[0]))
    return AdjointPath(p, bundle, control.label)


def hamiltonian_on_path(spec: ProblemSpec, traj: Trajectory, adj: AdjointPath,
                        v_all: np.ndarray) -> np.ndarray:
    """``H`` at every node ``i < N`` for controls ``v_all`` (M, N, k); shape (M, N)."""
    grid = traj.grid
    return np.stack([hamiltonian(spec, grid.t(i), traj.y_hat[:, i], traj.z[:, i],
                                 adj.p[:, i], v_all[:, i]) for i in range(grid.N)], axis=1)


def hamiltonian_over_atoms(spec: ProblemSpec, traj: Trajectory, adj: AdjointPath,
                           atoms: np.ndarray) -> np.ndarray:
    """``H`` for every atom at every node ``i < N``; shape (M, N, L)."""
    grid = traj.grid
    M = traj.bundle.M
    out = np.empty((M, grid.N, atoms.shape[0]))
    for i in range(grid.N):
        for a, atom in enumerate(atoms):
            v = np.broadcast_to(atom, (M, atom.size))
            out[:, i, a] = hamiltonian(spec, grid.t(i), traj.y_hat[:, i], traj.z[:, i],
                                       adj.p[:, i], v)
    return out
