"""Exact fractional Brownian motion on uniform time grids."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.integrate import cumulative_trapezoid

from .errors import InputError, NumericalError, UnsupportedParameterError
from .rng import Purpose, stream

JITTER_LEVELS = (1e-12, 1e-11, 1e-10)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = k T / n`` on ``[0, T]``."""

    horizon: float
    steps: int
    times: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise InputError(f"horizon must be positive, got {self.horizon}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise InputError(f"steps must be a positive integer, got {self.steps}")
        object.__setattr__(self, "steps", int(self.steps))
        t = np.arange(self.steps + 1) * float(self.horizon) / self.steps
        t[-1] = self.horizon
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    def __len__(self) -> int:
        return self.steps + 1


def check_hurst(H: float) -> float:
    H = float(H)
    if not np.isfinite(H) or H <= 0:
        raise UnsupportedParameterError(f"Hurst parameter must be positive, got {H}")
    if abs(H - round(H)) <= 1e-9:
        raise UnsupportedParameterError(f"integer Hurst parameter {H} is excluded")
    return H


def fbm_cov(s, t, H: float):
    """Covariance ``E[W_s W_t]`` of one coordinate of fBm with ``H in (0, 1)``."""
    H = check_hurst(H)
    if H > 1:
        raise UnsupportedParameterError("fbm_cov is only defined for H in (0, 1); use sample_fbm for H > 1")
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s < 0) or np.any(t < 0):
        raise InputError("times must be nonnegative")
    two_h = 2.0 * H
    out = 0.5 * (np.abs(t) ** two_h + np.abs(s) ** two_h - np.abs(t - s) ** two_h)
    return float(out) if out.ndim == 0 else out


def increment_autocov(n: int, dt: float, H: float) -> np.ndarray:
    """Autocovariance of fractional Gaussian noise with step ``dt`` at lags 0..n-1."""
    k = np.arange(n, dtype=float)
    two_h = 2.0 * H
    return 0.5 * dt**two_h * (np.abs(k + 1) ** two_h - 2 * k**two_h + np.abs(k - 1) ** two_h)


def cholesky_jitter(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; escalates a diagonal jitter 1e-12 -> 1e-10 before giving up."""
    try:
        return linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError:
        pass
    scale = float(np.mean(np.diag(cov))) or 1.0
    eye = np.eye(cov.shape[0])
    for eps in JITTER_LEVELS:
        try:
            return linalg.cholesky(cov + eps * scale * eye, lower=True)
        except linalg.LinAlgError:
            continue
    raise NumericalError(f"covariance not positive definite after jitter {JITTER_LEVELS[-1]:g}")


@lru_cache(maxsize=32)
def _increment_factor(n: int, dt: float, H: float) -> np.ndarray:
    L = cholesky_jitter(linalg.toeplitz(increment_autocov(n, dt, H)))
    L.setflags(write=False)
    return L


@lru_cache(maxsize=32)
def _circulant_sqrt_eigs(n: int, dt: float, H: float) -> np.ndarray | None:
    gamma = increment_autocov(n + 1, dt, H)
    row = np.concatenate([gamma[: n + 1], gamma[n - 1 : 0 : -1]])
    lam = np.fft.fft(row).real
    if lam.min() < -1e-12 * lam.max():
        return None
    out = np.sqrt(np.clip(lam, 0.0, None) / row.size)
    out.setflags(write=False)
    return out


@dataclass
class PathEnsemble:
    """Paths shaped ``[replicas][particles][n+1][d]`` on a common grid."""

    values: np.ndarray
    grid: TimeGrid

    def __post_init__(self):
        v = self.values
        if v.ndim != 4 or v.shape[2] != len(self.grid):
            raise InputError(f"ensemble shape {v.shape} inconsistent with grid of {len(self.grid)} points")

    @property
    def replicas(self) -> int:
        return self.values.shape[0]

    @property
    def particles(self) -> int:
        return self.values.shape[1]

    @property
    def dim(self) -> int:
        return self.values.shape[3]

    def to_csv(self, path: str | Path) -> Path:
        """Dump as rows ``replica, particle, k, t, x_1..x_d``."""
        path = Path(path)
        t = self.grid.times
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["replica", "particle", "k", "t"] + [f"x_{c + 1}" for c in range(self.dim)])
            for r in range(self.replicas):
                for i in range(self.particles):
                    for k in range(len(t)):
                        w.writerow([r, i, k, repr(float(t[k]))] + [repr(float(x)) for x in self.values[r, i, k]])
        return path


def _fgn(z: np.ndarray, n: int, dt: float, H: float, method: str) -> np.ndarray:
    """Map one stream's normals to an increment vector of length n."""
    if method == "circulant":
        sq = _circulant_sqrt_eigs(n, dt, H)
        if sq is not None:
            m = sq.size
            eps = z[:m] + 1j * z[m : 2 * m]
            return np.fft.fft(sq * eps).real[:n]
    return _increment_factor(n, dt, H) @ z[:n]


def normals_needed(n: int, method: str) -> int:
    return 4 * n if method == "circulant" else n


def sample_fbm(grid: TimeGrid, H: float, d: int, count: int, seed: int, *, particles: int = 1,
               purpose: int = Purpose.NOISE, method: str = "cholesky") -> PathEnsemble:
    """Exact fBm on ``grid`` for ``H in (0,1) U (1,2)``.

    One independent Philox stream per (replica, particle, coordinate); each
    stream is transformed on its own so a path never depends on how many
    other paths were requested. For ``H in (1,2)`` the path is the cumulative
    trapezoidal integral of the ``(H-1)``-path drawn from the same streams.
    """
    H = check_hurst(H)
    if H >= 2:
        raise UnsupportedParameterError(f"H = {H} >= 2 is not supported")
    if count < 1 or particles < 1 or d < 1:
        raise InputError("count, particles and d must be positive")
    if method not in ("cholesky", "circulant"):
        raise InputError(f"unknown sampling method {method!r}")
    base_h = H - 1.0 if H > 1 else H
    n = grid.steps
    size = normals_needed(n, method)
    if method == "cholesky":
        _increment_factor(n, grid.dt, base_h)
    w = np.zeros((count, particles, d, n + 1))
    for r in range(count):
        for i in range(particles):
            for c in range(d):
                z = stream(seed, purpose, r, i, c).standard_normal(size)
                np.cumsum(_fgn(z, n, grid.dt, base_h, method), out=w[r, i, c, 1:])
    if H > 1:
        w = integrate_path(w, grid, axis=-1)
    return PathEnsemble(np.ascontiguousarray(np.moveaxis(w, 2, 3)), grid)


def integrate_path(values: np.ndarray, grid: TimeGrid, axis: int = 2) -> np.ndarray:
    """Cumulative trapezoidal integral from 0 along the time axis."""
    return cumulative_trapezoid(values, dx=grid.dt, axis=axis, initial=0.0)


def conditional_law(times, values, H: float, t: float) -> tuple[float, float]:
    """Gaussian conditional mean and variance of ``W_t`` given ``W`` at ``times``.

    Observations at time 0 are dropped (``W_0 = 0`` carries no information).
    """
    H = check_hurst(H)
    if H > 1:
        raise UnsupportedParameterError("conditional_law requires H in (0, 1)")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    values = np.atleast_1d(np.asarray(values, dtype=float))
    if times.size == 0 or times.shape != values.shape:
        raise InputError("observations must be a nonempty set of (time, value) pairs")
    if not (np.all(np.isfinite(times)) and np.all(np.isfinite(values))):
        raise InputError("observations must be finite")
    keep = times > 0
    times, values = times[keep], values[keep]
    prior = fbm_cov(t, t, H)
    if times.size == 0:
        return 0.0, prior
    s_oo = fbm_cov(times[:, None], times[None, :], H)
    s_to = fbm_cov(np.full_like(times, t), times, H)
    L = cholesky_jitter(np.atleast_2d(s_oo))
    a = linalg.solve_triangular(L, s_to, lower=True)
    b = linalg.solve_triangular(L, values, lower=True)
    mean = float(a @ b)
    var = max(prior - float(a @ a), 0.0)
    return mean, var
