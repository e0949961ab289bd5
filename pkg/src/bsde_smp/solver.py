"""Backward regression solver for the controlled BSDE and the cost estimator."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement
from math import comb, factorial, sqrt
from typing import Optional

import numpy as np
import scipy.linalg

from .core import (BrownianBundle, ConfigurationError, ControlLaw, DivergenceError,
                   ProblemSpec)


class RegressionError(ArithmeticError):
    """Normal equations singular even after the ridge term."""

    def __init__(self, cond: float):
        self.cond = cond
        super().__init__(f"singular normal equations (condition estimate {cond:.3e})")


@dataclass(frozen=True)
class RegressionConfig:
    """Total-degree polynomial basis of degree ``degree`` in the Brownian
    state; ``ridge=None`` selects ``1e-10 * trace / basis_size``."""
    degree: int = 3
    ridge: Optional[float] = None

    def __post_init__(self):
        if self.degree < 0:
            raise ConfigurationError(f"basis degree must be >= 0, got {self.degree}")
        if self.ridge is not None and self.ridge < 0:
            raise ConfigurationError(f"ridge must be >= 0, got {self.ridge}")

    def basis_size(self, d: int) -> int:
        return comb(d + self.degree, self.degree)


def _multi_indices(d: int, D: int) -> list:
    out = []
    for deg in range(1, D + 1):
        for combo in combinations_with_replacement(range(d), deg):
            out.append(np.bincount(combo, minlength=d))
    return out


def _hermite_table(x: np.ndarray, D: int) -> np.ndarray:
    """Normalised probabilists' Hermite polynomials He_k(x)/sqrt(k!), k <= D."""
    H = np.empty((D + 1,) + x.shape)
    H[0] = 1.0
    if D >= 1:
        H[1] = x
    for k in range(1, D):
        H[k + 1] = x * H[k] - k * H[k - 1]
    for k in range(D + 1):
        H[k] /= sqrt(factorial(k))
    return H


class PolynomialFit:
    """Least-squares projection onto polynomials of the features.

    Features are standardised per coordinate and expanded in a product
    Hermite basis of total degree ``<= config.degree``. The intercept is
    fitted unpenalised on centred columns, so fitted values always have the
    same sample mean as the targets; coordinates with zero spread are
    dropped, which reduces the fit to the plain mean at ``t = 0``.
    """

    def __init__(self, features: np.ndarray, config: RegressionConfig):
        X = np.asarray(features, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        M, d = X.shape
        p = config.basis_size(d)
        if p > M / 10:
            raise ConfigurationError(
                f"basis size {p} exceeds M/10 = {M / 10:g}; lower the degree or add paths")
        self.config = config
        self.mean = X.mean(axis=0)
        spread = X.std(axis=0)
        self.active = np.flatnonzero(spread > 1e-300)
        self.scale = np.where(spread > 1e-300, spread, 1.0)
        self.index = _multi_indices(self.active.size, config.degree)
        Phi = self._raw_basis(X)
        self.col_mean = Phi.mean(axis=0) if Phi.shape[1] else np.zeros(0)
        if Phi.shape[1] == 0:
            self.lam = 0.0
            self._factor = None
            self._Phi_c = Phi
            return
        Phi_c = Phi - self.col_mean
        A = Phi_c.T @ Phi_c
        if config.ridge is None:
            full_trace = M + np.einsum("ij,ij->", Phi, Phi)
            lam = 1e-10 * full_trace / (Phi.shape[1] + 1)
        else:
            lam = config.ridge
        self.lam = lam
        Areg = A + lam * np.eye(A.shape[0])
        cond = np.linalg.cond(Areg)
        if not np.isfinite(cond) or cond > 1e14:
            raise RegressionError(cond)
        try:
            self._factor = scipy.linalg.cho_factor(Areg)
        except np.linalg.LinAlgError:
            raise RegressionError(cond) from None
        self._A = A
        self._Phi_c = Phi_c

    def _raw_basis(self, X: np.ndarray) -> np.ndarray:
        if not self.index:
            return np.zeros((X.shape[0], 0))
        U = (X[:, self.active] - self.mean[self.active]) / self.scale[self.active]
        H = _hermite_table(U.T, self.config.degree)   # (D+1, a, M)
        cols = []
        for alpha in self.index:
            col = np.ones(X.shape[0])
            for j, power in enumerate(alpha):
                if power:
                    col = col * H[power, j]
            cols.append(col)
        return np.stack(cols, axis=1)

    def coefficients(self, targets: np.ndarray):
        Y = np.asarray(targets, dtype=float)
        Ybar = Y.mean(axis=0)
        if self._factor is None:
            return Ybar, np.zeros((0,) + Y.shape[1:])
        r = self._Phi_c.T @ (Y - Ybar)
        beta = scipy.linalg.cho_solve(self._factor, r)
        # one refinement step removes the first-order ridge bias
        beta = beta + scipy.linalg.cho_solve(self._factor, r - self._A @ beta)
        return Ybar, beta

    def project(self, targets: np.ndarray) -> np.ndarray:
        """Fitted values at the training features."""
        Ybar, beta = self.coefficients(targets)
        if beta.shape[0] == 0:
            return np.broadcast_to(Ybar, np.shape(targets)).copy()
        return Ybar + self._Phi_c @ beta

    def model(self, targets: np.ndarray):
        """Callable evaluating the fitted polynomial at new features."""
        Ybar, beta = self.coefficients(targets)

        def predict(features):
            X = np.asarray(features, dtype=float)
            if X.ndim == 1:
                X = X[:, None]
            if beta.shape[0] == 0:
                return np.broadcast_to(Ybar, (X.shape[0],) + np.shape(Ybar)).copy()
            return Ybar + (self._raw_basis(X) - self.col_mean) @ beta

        return predict


def regress(features, targets, config: RegressionConfig) -> np.ndarray:
    """Empirical conditional expectation of ``targets`` given ``features``,
    returned as fitted values at each sample."""
    return PolynomialFit(features, config).project(targets)


# ---------------------------------------------------------------------------


@dataclass(eq=False)
class Trajectory:
    """Discrete solution of the BSDE on a bundle.

    ``y`` and ``y_hat`` have shape (M, N+1, n), ``z`` has shape (M, N+1, n, d)
    with ``z[:, N] = 0``. ``y_hat[:, i]`` is the regressed conditional mean
    ``E_i[y_{i+1}]`` at which the explicit scheme evaluates the driver; cost,
    adjoint and Hamiltonian checks evaluate coefficients at ``(y_hat, z)`` so
    every discrete quantity refers to the same state. ``y_hat[:, N] = y[:, N]``.
    """
    y: np.ndarray
    z: np.ndarray
    y_hat: np.ndarray
    controls: np.ndarray
    bundle: BrownianBundle
    label: str = ""

    @property
    def grid(self):
        return self.bundle.grid


@dataclass(frozen=True)
class CostEstimate:
    value: float
    stderr: float
    paths: int

    def to_dict(self) -> dict:
        return {"value": self.value, "stderr": self.stderr, "paths": self.paths}


def _check_finite(arr: np.ndarray, what: str, i: int):
    bad = ~np.isfinite(arr.reshape(arr.shape[0], -1)).all(axis=1)
    if bad.any():
        raise DivergenceError(what, i, int(np.flatnonzero(bad)[0]))


def solve_bsde(spec: ProblemSpec, control: ControlLaw, bundle: BrownianBundle,
               config: RegressionConfig = RegressionConfig()) -> Trajectory:
    """Explicit backward regression scheme.

    For i = N-1, ..., 0::

        y_hat_i = E_i[y_{i+1}]
        z_i     = E_i[(y_{i+1} - y_hat_i) dW_i^T] / dt
        y_i     = y_hat_i - b(t_i, y_hat_i, z_i, u_i) dt

    with ``E_i`` the polynomial regression on ``W_{t_i}``. Subtracting
    ``y_hat_i`` inside the z-target leaves its conditional mean unchanged
    (``E_i[dW_i] = 0``) and removes the ``O(1/dt)`` variance of the raw
    product.
    """
    grid = bundle.grid
    if spec.dims.d != bundle.d:
        raise ConfigurationError("bundle dimension does not match the problem")
    M, N, dt = bundle.M, grid.N, grid.dt
    n, d = spec.dims.n, spec.dims.d
    y = np.empty((M, N + 1, n))
    z = np.zeros((M, N + 1, n, d))
    y_hat = np.empty((M, N + 1, n))
    controls = np.empty((M, N, spec.dims.k))
    y[:, N] = spec.xi(bundle.W[:, N])
    _check_finite(y[:, N], "terminal value", N)
    y_hat[:, N] = y[:, N]
    for i in range(N - 1, -1, -1):
        fit = PolynomialFit(bundle.W[:, i], config)
        y_next = y[:, i + 1]
        yh = fit.project(y_next)
        target = (y_next - yh)[:, :, None] * bundle.dW[:, i, None, :] / dt
        zi = fit.project(target.reshape(M, n * d)).reshape(M, n, d)
        v = control.evaluate(i, bundle)
        yi = yh - spec.b(grid.t(i), yh, zi, v) * dt
        _check_finite(yi, "backward sweep", i)
        _check_finite(zi, "backward sweep", i)
        y[:, i], z[:, i], y_hat[:, i], controls[:, i] = yi, zi, yh, v
    return Trajectory(y, z, y_hat, controls, bundle, control.label)


def running_cost(spec: ProblemSpec, traj: Trajectory, controls=None) -> np.ndarray:
    """Per-path left-endpoint sum of ``h dt``, shape (M,)."""
    grid = traj.grid
    v = traj.controls if controls is None else controls
    total = np.zeros(traj.bundle.M)
    for i in range(grid.N):
        total += spec.h(grid.t(i), traj.y_hat[:, i], traj.z[:, i], v[:, i]) * grid.dt
    return total


def _estimate(samples: np.ndarray) -> CostEstimate:
    M = samples.size
    se = float(samples.std(ddof=1) / np.sqrt(M)) if M > 1 else 0.0
    return CostEstimate(float(samples.mean()), se, M)


def evaluate_cost(spec: ProblemSpec, control: ControlLaw, traj: Trajectory) -> CostEstimate:
    """Monte Carlo estimate of ``E[g(y_0) + int h dt]`` (left-endpoint sum)."""
    v = control.values(traj.bundle)
    per_path = spec.g(traj.y[:, 0]) + running_cost(spec, traj, v)
    if not np.all(np.isfinite(per_path)):
        raise DivergenceError("cost", 0, int(np.flatnonzero(~np.isfinite(per_path))[0]))
    return _estimate(per_path)
