"""Shared model objects: dimensions, time grid, Brownian driver, problem
coefficients, control sets and control laws.

All batch-evaluated maps follow one shape convention, with ``M`` the batch
(path) axis:

=========  ==================  ==============================
map        inputs              output
=========  ==================  ==============================
b          t, y, z, v          (M, n)
b_y                            (M, n, n)   ``[r, j] = db_r/dy_j``
b_z                            (M, n, n, d) ``[r, j, l] = db_r/dz_jl``
h                              (M,)
h_y                            (M, n)
h_z                            (M, n, d)
g, g_y     y                   (M,), (M, n)
xi         w = W_T             (M, n)
=========  ==================  ==============================

with ``y`` of shape (M, n), ``z`` of shape (M, n, d) and ``v`` of shape (M, k).
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class ConfigurationError(ValueError):
    """Invalid user-supplied configuration (exit code 2 in the CLI)."""


class GradientMismatchError(ValueError):
    """An analytic partial disagrees with finite differences of its primal map."""

    def __init__(self, name: str, rel_error: float, tol: float):
        self.name = name
        self.rel_error = rel_error
        super().__init__(
            f"analytic partial {name} disagrees with finite differences: "
            f"max relative error {rel_error:.3e} > {tol:.1e}")


class DivergenceError(ArithmeticError):
    """Non-finite value produced by a time-stepping scheme."""

    def __init__(self, what: str, i: int, m: int):
        self.i, self.m = i, m
        super().__init__(f"{what}: non-finite value at time index {i}, path {m}")


@dataclass(frozen=True)
class Dimensions:
    n: int
    d: int
    k: int

    def __post_init__(self):
        if min(self.n, self.d, self.k) < 1:
            raise ConfigurationError(f"dimensions must be >= 1, got {self}")


@dataclass(frozen=True)
class TimeGrid:
    T: float
    N: int

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.N + 1) * self.dt
        t[-1] = self.T
        return t

    def t(self, i: int) -> float:
        return self.T if i == self.N else i * self.dt


def build_grid(T: float, N: int) -> TimeGrid:
    """Uniform grid on [0, T] with ``N`` steps."""
    if not (np.isfinite(T) and T > 0):
        raise ConfigurationError(f"horizon must be positive, got T={T}")
    if int(N) != N or N < 1:
        raise ConfigurationError(f"step count must be a positive integer, got N={N}")
    return TimeGrid(float(T), int(N))


@dataclass(frozen=True, eq=False)
class BrownianBundle:
    """Brownian increments ``dW`` (M, N, d) and cumulative paths ``W`` (M, N+1, d)."""
    grid: TimeGrid
    dW: np.ndarray
    W: np.ndarray
    seed: int

    @property
    def M(self) -> int:
        return self.dW.shape[0]

    @property
    def d(self) -> int:
        return self.dW.shape[2]


def _path_normals(seed: int, start: int, stop: int, N: int, d: int) -> np.ndarray:
    # One Philox counter substream per path: the high counter word is the path
    # index, so a path's draws do not depend on how paths are split into chunks.
    out = np.empty((stop - start, N, d))
    for m in range(start, stop):
        bitgen = np.random.Philox(key=seed, counter=[0, 0, 0, m])
        out[m - start] = np.random.Generator(bitgen).standard_normal((N, d))
    return out


def sample_brownian(grid: TimeGrid, dims: Dimensions, M: int, seed: int,
                    workers: int = 1) -> BrownianBundle:
    """Sample ``M`` Brownian paths on ``grid``.

    The result is bit-identical for a given ``seed`` whatever the value of
    ``workers``.
    """
    if int(M) != M or M < 1:
        raise ConfigurationError(f"path count must be >= 1, got M={M}")
    if seed < 0:
        raise ConfigurationError(f"seed must be non-negative, got {seed}")
    M, N, d = int(M), grid.N, dims.d
    workers = max(1, int(workers))
    bounds = np.linspace(0, M, min(workers, M) + 1).astype(int)
    if workers == 1:
        z = _path_normals(seed, 0, M, N, d)
    else:
        with ThreadPoolExecutor(workers) as pool:
            parts = pool.map(lambda ab: _path_normals(seed, ab[0], ab[1], N, d),
                             zip(bounds[:-1], bounds[1:]))
            z = np.concatenate(list(parts), axis=0)
    dW = z * np.sqrt(grid.dt)
    W = np.zeros((M, N + 1, d))
    np.cumsum(dW, axis=1, out=W[:, 1:])
    dW.setflags(write=False)
    W.setflags(write=False)
    return BrownianBundle(grid, dW, W, int(seed))


# ---------------------------------------------------------------------------
# control sets


_MEMBER_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ControlSet:
    """Control set U: a finite atom list, a box ``[lo, hi]^k`` discretised at
    ``resolution`` points per axis, or the probability simplex over ``L``
    atoms (used for relaxed controls, whose "control" is a weight vector).
    """
    kind: str
    atoms: Optional[np.ndarray] = None
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None
    resolution: int = 21

    @classmethod
    def finite(cls, atoms) -> "ControlSet":
        a = np.asarray(atoms, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        if a.shape[0] == 0:
            raise ConfigurationError("control set needs at least one atom")
        return cls("atoms", atoms=a)

    @classmethod
    def box(cls, lo, hi, resolution: int = 21) -> "ControlSet":
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ConfigurationError(f"bad box bounds {lo}, {hi}")
        if resolution < 1:
            raise ConfigurationError("box resolution must be >= 1")
        return cls("box", lo=lo, hi=hi, resolution=int(resolution))

    @classmethod
    def simplex(cls, L: int) -> "ControlSet":
        return cls("simplex", atoms=np.eye(L))

    @property
    def k(self) -> int:
        if self.kind == "box":
            return self.lo.size
        return self.atoms.shape[1]

    @property
    def is_convex(self) -> bool:
        if self.kind == "atoms":
            return self.atoms.shape[0] == 1
        return True

    def grid(self, resolution: Optional[int] = None) -> np.ndarray:
        """Atoms used for maximisation, shape (L, k)."""
        if self.kind != "box":
            return self.atoms
        R = self.resolution if resolution is None else int(resolution)
        axes = [np.linspace(a, b, R) if R > 1 else np.array([(a + b) / 2])
                for a, b in zip(self.lo, self.hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def contains(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self.kind == "box":
            return np.all((v >= self.lo - _MEMBER_TOL) & (v <= self.hi + _MEMBER_TOL), axis=-1)
        if self.kind == "simplex":
            return np.all(v >= -_MEMBER_TOL, axis=-1) & (np.abs(v.sum(-1) - 1.0) <= _MEMBER_TOL)
        diff = np.abs(v[..., None, :] - self.atoms)
        return np.any(np.all(diff <= _MEMBER_TOL, axis=-1), axis=-1)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "box":
            return rng.uniform(self.lo, self.hi, size=(size, self.k))
        if self.kind == "simplex":
            return rng.dirichlet(np.ones(self.k), size=size)
        return self.atoms[rng.integers(0, self.atoms.shape[0], size)]

    def describe(self) -> dict:
        if self.kind == "box":
            return {"kind": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist(),
                    "resolution": self.resolution}
        return {"kind": self.kind, "atoms": self.atoms.tolist()}


# ---------------------------------------------------------------------------
# problem coefficients


def _zeros_like_b_z(y, z):
    M, n = y.shape
    return np.zeros((M, n, n, z.shape[2]))


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Coefficient bundle of a controlled BSDE

        dy = b(t, y, z, v) dt + z dW,   y_T = xi(W_T),

    with cost ``E[g(y_0) + int h(t, y, z, v) dt]``. See the module docstring
    for array shapes.
    """
    dims: Dimensions
    b: Callable
    b_y: Callable
    b_z: Callable
    h: Callable
    h_y: Callable
    h_z: Callable
    g: Callable
    g_y: Callable
    xi: Callable
    control_set: ControlSet
    name: str = "custom"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.control_set.k != self.dims.k:
            raise ConfigurationError(
                f"control set dimension {self.control_set.k} != k={self.dims.k}")


# ---------------------------------------------------------------------------
# control laws


@dataclass(frozen=True, eq=False)
class ControlLaw:
    """Adapted feedback control.

    ``fn(i, w)`` receives the time index and the Brownian state ``W_{t_i}``
    of shape (M, d) and returns controls of shape (M, k). A law flagged
    ``path_dependent`` instead receives the history ``W[:, :i+1]`` of shape
    (M, i+1, d); either way it never sees the future.
    """
    fn: Callable
    control_set: ControlSet
    label: str = "control"
    time_only: bool = False
    path_dependent: bool = False

    def __call__(self, i: int, w: np.ndarray) -> np.ndarray:
        v = np.asarray(self.fn(i, w), dtype=float)
        M = w.shape[0]
        if v.ndim == 1:
            v = np.broadcast_to(v, (M, v.size))
        if v.shape != (M, self.control_set.k):
            raise ConfigurationError(
                f"control {self.label!r} returned shape {v.shape}, expected {(M, self.control_set.k)}")
        if not np.all(self.control_set.contains(v)):
            raise ConfigurationError(f"control {self.label!r} left the control set at index {i}")
        return v

    def evaluate(self, i: int, bundle: BrownianBundle) -> np.ndarray:
        w = bundle.W[:, : i + 1] if self.path_dependent else bundle.W[:, i]
        return self(i, w)

    def values(self, bundle: BrownianBundle) -> np.ndarray:
        """Controls at nodes 0..N-1, shape (M, N, k)."""
        return np.stack([self.evaluate(i, bundle) for i in range(bundle.grid.N)], axis=1)


def constant_control(value, control_set: ControlSet, label: Optional[str] = None) -> ControlLaw:
    v = np.atleast_1d(np.asarray(value, dtype=float))
    if not control_set.contains(v):
        raise ConfigurationError(f"constant control {v} is not in U")
    return ControlLaw(lambda i, w: v, control_set,
                      label or "const:" + ",".join(f"{x:+g}" for x in v), time_only=True)


def schedule_control(values, control_set: ControlSet, label: str = "schedule") -> ControlLaw:
    """Time-only law from a per-node table of shape (N, k) (or (N,) for k = 1)."""
    table = np.asarray(values, dtype=float)
    if table.ndim == 1:
        table = table[:, None]
    if not np.all(control_set.contains(table)):
        raise ConfigurationError("schedule leaves the control set")
    table = table.copy()
    table.setflags(write=False)
    return ControlLaw(lambda i, w: table[min(i, len(table) - 1)], control_set, label,
                      time_only=True)


# ---------------------------------------------------------------------------
# spec validation


def _fd_jacobian(f, x, eps=1e-6):
    """Central differences of batched ``f`` w.r.t. trailing axes of ``x``."""
    M = x.shape[0]
    flat = x.reshape(M, -1)
    cols = []
    for j in range(flat.shape[1]):
        step = eps * np.maximum(1.0, np.abs(flat[:, j]))
        xp, xm = flat.copy(), flat.copy()
        xp[:, j] += step
        xm[:, j] -= step
        fp = f(xp.reshape(x.shape))
        fm = f(xm.reshape(x.shape))
        cols.append((fp - fm) / (2 * step.reshape((M,) + (1,) * (fp.ndim - 1))))
    return np.stack(cols, axis=-1).reshape(cols[0].shape + x.shape[1:])


def _rel_err(analytic, fd) -> float:
    return float(np.max(np.abs(analytic - fd) / np.maximum(1.0, np.abs(fd)), initial=0.0))


def random_arguments(spec: ProblemSpec, samples: int, rng: np.random.Generator, scale=2.0):
    n, d = spec.dims.n, spec.dims.d
    t = float(rng.uniform(0, 1))
    y = rng.normal(scale=scale, size=(samples, n))
    z = rng.normal(scale=scale, size=(samples, n, d))
    v = spec.control_set.sample(rng, samples)
    return t, y, z, v


def partial_errors(spec: ProblemSpec, samples: int = 100, seed: int = 0) -> dict:
    """Max scale-floored relative error of every analytic partial, and of
    the Hamiltonian partials at a random ``p``, against central finite
    differences, keyed by partial name."""
    rng = np.random.default_rng(seed)
    t, y, z, v = random_arguments(spec, samples, rng)
    p = rng.normal(size=y.shape)

    def H(yy, zz):
        return np.einsum("mi,mi->m", p, spec.b(t, yy, zz, v)) - spec.h(t, yy, zz, v)

    H_y = np.einsum("mrj,mr->mj", spec.b_y(t, y, z, v), p) - spec.h_y(t, y, z, v)
    H_z = np.einsum("mrjl,mr->mjl", spec.b_z(t, y, z, v), p) - spec.h_z(t, y, z, v)
    return {
        "b_y": _rel_err(spec.b_y(t, y, z, v), _fd_jacobian(lambda yy: spec.b(t, yy, z, v), y)),
        "b_z": _rel_err(spec.b_z(t, y, z, v), _fd_jacobian(lambda zz: spec.b(t, y, zz, v), z)),
        "h_y": _rel_err(spec.h_y(t, y, z, v), _fd_jacobian(lambda yy: spec.h(t, yy, z, v), y)),
        "h_z": _rel_err(spec.h_z(t, y, z, v), _fd_jacobian(lambda zz: spec.h(t, y, zz, v), z)),
        "g_y": _rel_err(spec.g_y(y), _fd_jacobian(spec.g, y)),
        "H_y": _rel_err(H_y, _fd_jacobian(lambda yy: H(yy, z), y)),
        "H_z": _rel_err(H_z, _fd_jacobian(lambda zz: H(y, zz), z)),
    }


def _growth_flags(spec: ProblemSpec, rng: np.random.Generator) -> list:
    # Compare coefficient and partial magnitudes at |y|, |z| ~ 1 and ~ 1e3.
    flags = []
    n, d = spec.dims.n, spec.dims.d
    v = spec.control_set.sample(rng, 64)
    probes = {}
    for scale in (1.0, 1e3):
        y = rng.normal(size=(64, n)) * scale
        z = rng.normal(size=(64, n, d)) * scale
        probes[scale] = {
            "b": np.abs(spec.b(0.0, y, z, v)).max(),
            "h": np.abs(spec.h(0.0, y, z, v)).max(),
            "b_y": np.abs(spec.b_y(0.0, y, z, v)).max(),
            "h_y": np.abs(spec.h_y(0.0, y, z, v)).max(),
            "g_y": np.abs(spec.g_y(y)).max(),
        }
    for key in probes[1.0]:
        if probes[1e3][key] > 100.0 * (1.0 + probes[1.0][key]):
            flags.append(f"unbounded {key}")
    return flags


@dataclass
class SpecReport:
    max_rel_error: dict
    flags: list
    tolerance: float

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values())

    def to_dict(self) -> dict:
        return {"max_rel_error": self.max_rel_error, "flags": self.flags,
                "tolerance": self.tolerance}


def validate_spec(spec: ProblemSpec, samples: int = 100, seed: int = 0,
                  tol: float = 1e-5) -> SpecReport:
    """Finite-difference check of every analytic partial.

    Raises :class:`GradientMismatchError` on the first partial whose relative
    error exceeds ``tol``. Coefficients growing faster than the standing
    boundedness assumptions allow are flagged in the report, not rejected.
    """
    errors = partial_errors(spec, samples, seed)
    for name, err in errors.items():
        if not err <= tol:
            raise GradientMismatchError(name, err, tol)
    flags = _growth_flags(spec, np.random.default_rng(seed + 1))
    return SpecReport(errors, flags, tol)


# ---------------------------------------------------------------------------
# control metric


def control_mismatch_count(u: ControlLaw, v: ControlLaw, bundle: BrownianBundle) -> int:
    """Number of (path, node) pairs, nodes ``0..N-1``, where the laws differ."""
    total = 0
    for i in range(bundle.grid.N):
        a, b = u.evaluate(i, bundle), v.evaluate(i, bundle)
        total += int(np.count_nonzero(np.any(a != b, axis=1)))
    return total


def control_distance(u: ControlLaw, v: ControlLaw, grid: TimeGrid,
                     bundle: BrownianBundle) -> float:
    """Empirical ``P x dt`` measure of ``{u != v}``; lies in ``[0, T]``."""
    return control_mismatch_count(u, v, bundle) * grid.dt / bundle.M
