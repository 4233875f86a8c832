"""Euler time-stepping of the interacting particle system, its mean-field reference and coupled copies."""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import DivergenceError, InputError, StepSizeError
from .fbm import PathEnsemble, TimeGrid, check_hurst, sample_fbm
from .kernels import Kernel
from .rng import Purpose, stream

log = logging.getLogger(__name__)

BLOWUP = 1e12


@dataclass(frozen=True)
class InitLaw:
    """Law of X_0: ``point`` (at mean), ``gaussian`` (mean, std or cov) or ``uniform`` box [low, high]^d."""

    kind: str = "point"
    mean: float | tuple = 0.0
    std: float = 1.0
    cov: tuple | None = None
    low: float = -1.0
    high: float = 1.0

    def __post_init__(self):
        if self.kind not in ("point", "gaussian", "uniform"):
            raise InputError(f"unknown initial law {self.kind!r}; expected point, gaussian or uniform")
        if self.kind == "uniform" and not self.low < self.high:
            raise InputError("uniform initial law needs low < high")
        if self.kind == "gaussian" and self.cov is None and not self.std >= 0:
            raise InputError("gaussian initial law needs std >= 0")

    def _factor(self, dim: int) -> np.ndarray:
        if self.cov is None:
            return self.std * np.eye(dim)
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (dim, dim):
            raise InputError(f"covariance must be {dim} x {dim}")
        return linalg.cholesky(cov, lower=True)

    def sample(self, seed: int, replicas: int, particles: int, dim: int,
               purpose: int = Purpose.INIT) -> np.ndarray:
        """Initial positions ``[R][N][d]``; particle i of replica r always uses the same stream."""
        mean = np.broadcast_to(np.asarray(self.mean, dtype=float), (dim,))
        out = np.empty((replicas, particles, dim))
        if self.kind == "point":
            out[...] = mean
            return out
        L = self._factor(dim) if self.kind == "gaussian" else None
        for r in range(replicas):
            for i in range(particles):
                g = stream(seed, purpose, r, i)
                if self.kind == "gaussian":
                    out[r, i] = mean + L @ g.standard_normal(dim)
                else:
                    out[r, i] = self.low + (self.high - self.low) * g.random(dim)
        return out

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind in ("point", "gaussian"):
            d["mean"] = list(self.mean) if isinstance(self.mean, (tuple, list)) else self.mean
        if self.kind == "gaussian":
            if self.cov is None:
                d["std"] = self.std
            else:
                d["cov"] = [list(r) for r in self.cov]
        if self.kind == "uniform":
            d["low"], d["high"] = self.low, self.high
        return d


@dataclass(frozen=True)
class SimConfig:
    N: int
    d: int
    H: float
    grid: TimeGrid
    kernel: Kernel
    init: InitLaw = field(default_factory=InitLaw)
    replicas: int = 1
    moment: float = 2.0
    M: int | None = None
    seed: int = 0
    allow_stiff: bool = False
    noise_method: str = "cholesky"

    def __post_init__(self):
        check_hurst(self.H)
        if self.N < 2:
            raise InputError(f"need at least two particles, got N = {self.N}")
        if self.replicas < 1 or self.d < 1:
            raise InputError("replicas and dimension must be positive")
        if self.kernel.dim != self.d:
            raise InputError(f"kernel dimension {self.kernel.dim} differs from d = {self.d}")
        if self.moment < 1:
            raise InputError("moment must be >= 1")
        if self.M is None:
            object.__setattr__(self, "M", 4 * self.N)
        if self.M < 4 * self.N:
            raise InputError(f"reference size M = {self.M} must be at least 4 N = {4 * self.N}")

    def replace(self, **kw) -> "SimConfig":
        data = {k: getattr(self, k) for k in self.__dataclass_fields__}
        if "N" in kw and "M" not in kw:
            data["M"] = None
        data.update(kw)
        return SimConfig(**data)


@dataclass
class MeasureFlow:
    """Uniform empirical measures ``(1/M) sum_m delta_{Y^m_k}`` at every grid time."""

    support: np.ndarray  # [n+1][M][d]
    grid: TimeGrid

    def __post_init__(self):
        if self.support.ndim != 3 or self.support.shape[0] != len(self.grid):
            raise InputError("flow support must be shaped [n+1][M][d] on its grid")
        if not np.all(np.isfinite(self.support)):
            raise InputError("flow support must be finite")

    @property
    def size(self) -> int:
        return self.support.shape[1]

    def pairing(self, phi) -> np.ndarray:
        """``<phi, mu_k>`` for every grid time."""
        return np.array([_particle_mean(phi(self.support[k])) for k in range(len(self.grid))])


@dataclass
class CouplingRun:
    """Particle system and its coupled copies, driven by the same data."""

    ips: PathEnsemble
    copies: PathEnsemble
    noise: PathEnsemble
    initials: np.ndarray
    flow: MeasureFlow | None = None


def _particle_mean(values: np.ndarray) -> float | np.ndarray:
    """Mean over the leading (particle) axis, independent of particle order."""
    return np.sum(np.sort(values, axis=0), axis=0) / values.shape[0]


# ---------------------------------------------------------------------------
# drift
# ---------------------------------------------------------------------------


def _sorted_order(positions: np.ndarray) -> np.ndarray:
    return np.lexsort(positions.T[::-1])


def drift_field(kernel: Kernel, t: float, positions: np.ndarray, block: int | None = None) -> np.ndarray:
    """Row i is ``(1/(N-1)) sum_{j != i} b_t(x_i, x_j)``.

    Interaction partners are summed in sorted position order, so each row is
    a function of the particle and the unordered set of the others. That makes
    the map permutation-equivariant bit for bit. ``block`` evaluates rows in
    tiles of that many particles with identical results.
    """
    x = np.asarray(positions, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InputError("positions must be shaped [N][d] with N >= 2")
    if not np.all(np.isfinite(x)):
        raise InputError("positions must be finite")
    N = x.shape[0]
    c = kernel.constant_value()
    if c is not None:
        return np.broadcast_to(kernel.modulation(t) * c, x.shape).copy()
    order = _sorted_order(x)
    rank = np.empty(N, dtype=np.intp)
    rank[order] = np.arange(N)
    partners = x[order]
    out = np.empty_like(x)
    step = N if not block else int(block)
    for lo in range(0, N, step):
        hi = min(N, lo + step)
        pair = kernel(t, x[lo:hi, None, :], partners[None, :, :])
        pair[np.arange(hi - lo), rank[lo:hi]] = 0.0
        out[lo:hi] = pair.sum(axis=1) / (N - 1)
    return out


def mean_field_drift(kernel: Kernel, t: float, positions: np.ndarray, support: np.ndarray) -> np.ndarray:
    """``(1/M) sum_m b_t(x_i, y_m)`` against a frozen empirical measure."""
    c = kernel.constant_value()
    if c is not None:
        return np.broadcast_to(kernel.modulation(t) * c, positions.shape).copy()
    return kernel(t, positions[:, None, :], support[None, :, :]).sum(axis=1) / support.shape[0]


# ---------------------------------------------------------------------------
# integrators
# ---------------------------------------------------------------------------


def check_step(kernel: Kernel, grid: TimeGrid, allow_stiff: bool) -> float:
    """Guard ``dt * Lip(b) <= 1``; returns the product."""
    ratio = grid.dt * kernel.lipschitz()
    if ratio > 1:
        msg = f"step dt = {grid.dt:g} times kernel Lipschitz bound {kernel.lipschitz():.4g} is {ratio:.3g} > 1"
        if not allow_stiff:
            raise StepSizeError(msg + "; set allow_stiff to proceed")
        warnings.warn(msg + "; proceeding because allow_stiff is set", RuntimeWarning, stacklevel=3)
    return ratio


def _check_finite(x: np.ndarray, replica: int, step: int):
    big = np.max(np.abs(x)) if x.size else 0.0
    if not np.isfinite(big) or big > BLOWUP:
        raise DivergenceError(replica, step, float(big))


def _euler(x0: np.ndarray, w: np.ndarray, grid: TimeGrid, drift, replica: int) -> np.ndarray:
    """Left-point Euler in remainder form: ``X_k = X_0 + I_k + W_k``, ``I_{k+1} = I_k + drift(t_k, X_k) dt``.

    Identical to stepping ``X_{k+1} = X_k + drift dt + dW`` in exact arithmetic,
    but reproduces ``X_0 + W`` exactly when the drift vanishes.
    """
    n, dt, t = grid.steps, grid.dt, grid.times
    out = np.empty_like(w)
    integral = np.zeros_like(x0)
    out[:, 0] = x0 + integral + w[:, 0]
    for k in range(n):
        integral = integral + drift(k, t[k], out[:, k]) * dt
        out[:, k + 1] = x0 + integral + w[:, k + 1]
        _check_finite(out[:, k + 1], replica, k + 1)
    return out


def _constant_paths(c: np.ndarray, x0: np.ndarray, w: np.ndarray, grid: TimeGrid) -> np.ndarray:
    return x0[:, None, :] + c * grid.times[None, :, None] + w


def _check_data(config: SimConfig, noise: PathEnsemble, initials: np.ndarray, particles: int):
    v = noise.values
    if v.shape != (config.replicas, particles, len(config.grid), config.d):
        raise InputError(f"noise shape {v.shape} does not match the configuration")
    if noise.grid != config.grid:
        raise InputError("noise grid differs from the configured grid")
    if initials.shape != (config.replicas, particles, config.d):
        raise InputError(f"initials shape {initials.shape} does not match the configuration")
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(initials))):
        raise InputError("noise and initials must be finite")


def _map_replicas(fn, count: int, threads: int):
    if threads <= 1 or count == 1:
        return [fn(r) for r in range(count)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(count)))


def simulate_ips(config: SimConfig, noise: PathEnsemble, initials: np.ndarray, *,
                 threads: int = 1, block: int | None = None) -> PathEnsemble:
    """Particle system driven by ``noise`` from ``initials``; returns ``[R][N][n+1][d]``."""
    initials = np.asarray(initials, dtype=float)
    _check_data(config, noise, initials, config.N)
    kernel, grid = config.kernel, config.grid
    c = kernel.constant_value()
    if c is None:
        check_step(kernel, grid, config.allow_stiff)

    def one(r):
        if c is not None:
            return _constant_paths(c, initials[r], noise.values[r], grid)
        return _euler(initials[r], noise.values[r], grid,
                      lambda k, t, x: drift_field(kernel, t, x, block), r)

    out = np.stack(_map_replicas(one, config.replicas, threads))
    return PathEnsemble(out, grid)


def build_mkv_reference(config: SimConfig, seed_aux: int) -> MeasureFlow:
    """Empirical law of an auxiliary M-particle system with its own noise and initial data."""
    grid, M = config.grid, config.M
    noise = sample_fbm(grid, config.H, config.d, 1, seed_aux, particles=M,
                       purpose=Purpose.AUX_NOISE, method=config.noise_method)
    x0 = config.init.sample(seed_aux, 1, M, config.d, purpose=Purpose.AUX_INIT)
    aux = config.replace(N=M, M=4 * M, replicas=1)
    paths = simulate_ips(aux, noise, x0).values[0]
    log.debug("built mean-field reference with M = %d", M)
    return MeasureFlow(np.ascontiguousarray(np.moveaxis(paths, 0, 1)), grid)


def simulate_coupled_copies(config: SimConfig, flow: MeasureFlow, noise: PathEnsemble,
                            initials: np.ndarray, *, threads: int = 1) -> PathEnsemble:
    """Copies ``Xbar^i`` driven by particle i's data with drift read from the frozen flow."""
    if flow.grid != config.grid:
        raise InputError("flow grid differs from the configured grid")
    if flow.support.shape[2] != config.d:
        raise InputError("flow dimension differs from the configured dimension")
    initials = np.asarray(initials, dtype=float)
    _check_data(config, noise, initials, noise.values.shape[1])
    kernel, grid = config.kernel, config.grid
    c = kernel.constant_value()
    if c is None:
        check_step(kernel, grid, config.allow_stiff)

    def one(r):
        if c is not None:
            return _constant_paths(c, initials[r], noise.values[r], grid)
        return _euler(initials[r], noise.values[r], grid,
                      lambda k, t, x: mean_field_drift(kernel, t, x, flow.support[k]), r)

    out = np.stack(_map_replicas(one, config.replicas, threads))
    return PathEnsemble(out, grid)


def draw_data(config: SimConfig, particles: int | None = None) -> tuple[PathEnsemble, np.ndarray]:
    """Noise and initial data of the coupling, keyed per (replica, particle) so N only truncates."""
    n = config.N if particles is None else particles
    noise = sample_fbm(config.grid, config.H, config.d, config.replicas, config.seed,
                       particles=n, method=config.noise_method)
    initials = config.init.sample(config.seed, config.replicas, n, config.d)
    return noise, initials


def run_coupling(config: SimConfig, *, flow: MeasureFlow | None = None, copies_kernel: Kernel | None = None,
                 threads: int = 1) -> CouplingRun:
    """One coupled (particle system, copies) pair on shared data.

    ``copies_kernel`` lets the copies and the reference use a different
    kernel than the particle system (moderate-interaction campaigns).
    """
    noise, initials = draw_data(config)
    ref_config = config if copies_kernel is None else config.replace(kernel=copies_kernel)
    if flow is None:
        flow = build_mkv_reference(ref_config, config.seed)
    ips = simulate_ips(config, noise, initials, threads=threads)
    copies = simulate_coupled_copies(ref_config, flow, noise, initials, threads=threads)
    return CouplingRun(ips, copies, noise, initials, flow)


# ---------------------------------------------------------------------------
# remainder diagnostic
# ---------------------------------------------------------------------------


def dyadic_intervals(steps: int) -> list[tuple[int, int]]:
    """Index pairs of ``[k 2^-j, (k+1) 2^-j]`` on a grid with a power-of-two step count."""
    if steps & (steps - 1):
        raise InputError(f"dyadic intervals need a power-of-two step count, got {steps}")
    out, width = [], steps
    while width >= 1:
        out.extend((a, a + width) for a in range(0, steps, width))
        width //= 2
    return out


def remainder_ratio(paths: PathEnsemble, noise: PathEnsemble, exponent: float) -> float:
    """``max`` over dyadic (s,t) of ``||theta_t - theta_s||_{L^2} / |t-s|^exponent`` with ``theta = X - W``.

    The L^2 norm is the Monte Carlo mean over replicas and particles.
    """
    theta = paths.values - noise.values
    t = paths.grid.times
    best = 0.0
    for a, b in dyadic_intervals(paths.grid.steps):
        inc = theta[:, :, b] - theta[:, :, a]
        moment = np.sqrt(np.mean(np.sum(inc * inc, axis=-1)))
        best = max(best, float(moment) / (t[b] - t[a]) ** exponent)
    return best
