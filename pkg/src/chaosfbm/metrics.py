"""Coupling and observable errors, negative Sobolev distances, path seminorms, controls and rate fits."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import special, stats

from .dynamics import CouplingRun, MeasureFlow, _particle_mean
from .errors import DomainError, InputError
from .fbm import PathEnsemble
from .rng import Purpose, stream

# ---------------------------------------------------------------------------
# test functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TestFunction:
    """Scalar ``phi: R^d -> R`` with declared Lipschitz and sup bounds."""

    __test__ = False  # not a pytest class

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    lip: float
    sup: float

    def __call__(self, x) -> np.ndarray:
        return self.fn(np.asarray(x, dtype=float))

    def check_lipschitz(self, dim: int, pairs: int = 2000, seed: int = 0, scale: float = 3.0) -> bool:
        g = stream(seed, Purpose.TEST_FN)
        x = scale * g.standard_normal((pairs, dim))
        y = x + g.standard_normal((pairs, dim)) * g.choice([1e-3, 1e-1, 1.0], size=(pairs, 1))
        lhs = np.abs(self(x) - self(y))
        rhs = self.lip * np.linalg.norm(x - y, axis=-1)
        return bool(np.all(lhs <= rhs * (1 + 1e-12) + 1e-15))


def _mean_tanh(x):
    return np.mean(np.tanh(x), axis=-1)


def _bump(x):
    return np.exp(-0.5 * np.sum(x * x, axis=-1))


def _sin_first(x):
    return np.sin(x[..., 0])


TEST_FUNCTIONS = {
    "tanh": TestFunction("tanh", _mean_tanh, 1.0, 1.0),
    "bump": TestFunction("bump", _bump, math.exp(-0.5), 1.0),
    "sin": TestFunction("sin", _sin_first, 1.0, 1.0),
    "constant": TestFunction("constant", lambda x: np.ones(x.shape[:-1]), 0.0, 1.0),
}


def test_function(name: str) -> TestFunction:
    if name not in TEST_FUNCTIONS:
        raise InputError(f"unknown test function {name!r}; expected one of {sorted(TEST_FUNCTIONS)}")
    return TEST_FUNCTIONS[name]


test_function.__test__ = False

# ---------------------------------------------------------------------------
# Monte Carlo moment estimates
# ---------------------------------------------------------------------------


def _moment_estimate(samples: np.ndarray, m: float) -> tuple[float, float]:
    """``(mean^{1/m}, delta-method stderr)`` from per-replica m-th power averages."""
    samples = np.asarray(samples, dtype=float)
    R = samples.size
    mean = math.fsum(samples) / R
    if mean == 0.0:
        return 0.0, 0.0
    se = float(np.std(samples, ddof=1)) / math.sqrt(R) if R > 1 else 0.0
    return mean ** (1 / m), mean ** (1 / m - 1) * se / m


def coupling_samples(run: CouplingRun, m: float) -> np.ndarray:
    """Per replica: the particle average of ``sup_k |X^i_k - Xbar^i_k|^m``."""
    if m < 1:
        raise DomainError("moment must be >= 1")
    a, b = run.ips.values, run.copies.values
    if a.size == 0 or a.shape != b.shape:
        raise InputError("coupling run is empty or its ensembles differ in shape")
    diff = a - b
    sup = np.max(np.sqrt(np.sum(diff * diff, axis=-1)), axis=-1) ** m  # [R][N]
    return np.array([math.fsum(row) / row.size for row in sup])


def coupling_error(run: CouplingRun, m: float = 2.0) -> tuple[float, float]:
    """``E[sup_t |X^1_t - Xbar^1_t|^m]^{1/m}`` with its standard error."""
    return _moment_estimate(coupling_samples(run, m), m)


def observable_samples(ips: PathEnsemble, flow: MeasureFlow, phi: TestFunction, m: float,
                       reference: np.ndarray | None = None) -> np.ndarray:
    """Per replica ``sup_k |<phi, mu^N_k> - <phi, mubar_k>|^m``."""
    if ips.values.size == 0:
        raise InputError("empty particle ensemble")
    if ips.values.shape[2] != flow.support.shape[0] or ips.dim != flow.support.shape[2]:
        raise InputError("particle ensemble and flow are inconsistent")
    ref = flow.pairing(phi) if reference is None else reference
    out = np.empty(ips.replicas)
    for r in range(ips.replicas):
        emp = _particle_mean(phi(ips.values[r]))  # [n+1]
        out[r] = np.max(np.abs(emp - ref)) ** m
    return out


def observable_error(ips: PathEnsemble, flow: MeasureFlow, phi: TestFunction, m: float = 2.0) -> tuple[float, float]:
    return _moment_estimate(observable_samples(ips, flow, phi, m), m)


def bootstrap_stderr(samples: np.ndarray, m: float, resamples: int = 2000, seed: int = 0) -> float:
    """Replica bootstrap of the ``mean^{1/m}`` estimator."""
    samples = np.asarray(samples, dtype=float)
    g = np.random.Generator(np.random.Philox(seed))
    idx = g.integers(0, samples.size, size=(resamples, samples.size))
    return float(np.std(np.mean(samples[idx], axis=1) ** (1 / m), ddof=1))


# ---------------------------------------------------------------------------
# negative Sobolev distance
# ---------------------------------------------------------------------------


def sample_frequencies(dim: int, lam: float, count: int, seed: int) -> tuple[np.ndarray, float]:
    """Frequencies with density proportional to ``(1 + |xi|)^{-2 lam}`` and the weight's total mass.

    With ``u = r / (1 + r)`` the radial law is Beta(d, 2 lam - d), so the
    sampling is exact; directions are uniform on the sphere.
    """
    if not 2 * lam > dim:
        raise DomainError(f"need 2 lambda > d for an integrable weight, got lambda = {lam}, d = {dim}")
    g = stream(seed, Purpose.FREQ)
    u = g.beta(dim, 2 * lam - dim, size=count)
    r = u / (1 - u)
    v = g.standard_normal((count, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    sphere = 2 * math.pi ** (dim / 2) / special.gamma(dim / 2)
    mass = sphere * special.beta(dim, 2 * lam - dim)
    return r[:, None] * v, float(mass)


def characteristic(cloud: np.ndarray, xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Real and imaginary part of ``(1/N) sum_j exp(i xi . x_j)``."""
    phase = np.asarray(cloud, dtype=float) @ xi.T  # [N][K]
    return np.mean(np.cos(phase), axis=0), np.mean(np.sin(phase), axis=0)


def _sobolev_from_chars(ca, cb, mass) -> float:
    re, im = ca[0] - cb[0], ca[1] - cb[1]
    return math.sqrt(mass * float(np.mean(re * re + im * im)))


def sobolev_distance(cloud_a, cloud_b, lam: float, freq_samples: int = 4096, seed: int = 0) -> float:
    """Importance-sampled ``[int (1+|xi|)^{-2 lam} |nu_hat(xi)|^2 dxi]^{1/2}`` for ``nu = mu_A - mu_B``."""
    a = np.atleast_2d(np.asarray(cloud_a, dtype=float))
    b = np.atleast_2d(np.asarray(cloud_b, dtype=float))
    if a.shape[1] != b.shape[1] or a.shape[0] == 0 or b.shape[0] == 0:
        raise InputError("clouds must be nonempty with equal dimension")
    xi, mass = sample_frequencies(a.shape[1], lam, freq_samples, seed)
    return _sobolev_from_chars(characteristic(a, xi), characteristic(b, xi), mass)


def sobolev_sup_samples(ips: PathEnsemble, flow: MeasureFlow, lam: float, freq_samples: int = 512,
                        seed: int = 0, stride: int = 1) -> np.ndarray:
    """Per replica ``max_k`` of the Sobolev distance between the particle cloud and the flow.

    Times are the grid points ``0, stride, 2 stride, ...`` plus the horizon.
    The flow's transforms are computed once and shared by all replicas.
    """
    xi, mass = sample_frequencies(ips.dim, lam, freq_samples, seed)
    n = ips.values.shape[2] - 1
    ks = sorted(set(range(0, n + 1, max(1, stride))) | {n})
    ref = [characteristic(flow.support[k], xi) for k in ks]
    out = np.empty(ips.replicas)
    for r in range(ips.replicas):
        out[r] = max(_sobolev_from_chars(characteristic(ips.values[r, :, k], xi), ref[j], mass)
                     for j, k in enumerate(ks))
    return out


# ---------------------------------------------------------------------------
# path seminorms
# ---------------------------------------------------------------------------


def _as_path(path) -> np.ndarray:
    y = np.asarray(path, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.ndim != 2 or y.shape[0] < 2:
        raise InputError("path must be shaped [n+1][d] with n >= 1")
    return y


def kappa_variation(path, kappa: float) -> float:
    """Exact ``(sup over grid partitions sum |Y_{t_{j+1}} - Y_{t_j}|^kappa)^{1/kappa}`` by dynamic programming."""
    if kappa < 1:
        raise DomainError(f"kappa must be >= 1, got {kappa}")
    y = _as_path(path)
    n = y.shape[0] - 1
    best = np.zeros(n + 1)
    for j in range(1, n + 1):
        inc = np.sqrt(np.sum((y[j] - y[:j]) ** 2, axis=1)) ** kappa
        best[j] = np.max(best[:j] + inc)
    return float(best[n] ** (1 / kappa))


def kappa_variation_bruteforce(path, kappa: float) -> float:
    """Enumerates all ``2^{n-1}`` partitions; for small n only."""
    y = _as_path(path)
    n = y.shape[0] - 1
    best = 0.0
    for mask in range(1 << (n - 1)):
        pts = [0] + [k for k in range(1, n) if mask >> (k - 1) & 1] + [n]
        total = sum(float(np.linalg.norm(y[b] - y[a])) ** kappa for a, b in zip(pts, pts[1:]))
        best = max(best, total)
    return best ** (1 / kappa)


def gagliardo_seminorm(path, beta: float, q: float, horizon: float = 1.0, chunk: int = 512) -> float:
    """Trapezoidal ``(iint |f_t - f_s|^q / |t-s|^{1 + beta q} ds dt)^{1/q}``, diagonal excluded."""
    if not 0 < beta < 1 or q < 1:
        raise DomainError("need beta in (0, 1) and q >= 1")
    y = _as_path(path)
    n = y.shape[0] - 1
    h = horizon / n
    w = np.full(n + 1, h)
    w[[0, -1]] = h / 2
    idx = np.arange(n + 1)
    total = 0.0
    for lo in range(0, n + 1, chunk):
        hi = min(n + 1, lo + chunk)
        diff = y[lo:hi, None, :] - y[None, :, :]
        num = np.sqrt(np.sum(diff * diff, axis=-1)) ** q
        gap = np.abs(idx[lo:hi, None] - idx[None, :]) * h
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.where(gap > 0, num / gap ** (1 + beta * q), 0.0)
        total += float(w[lo:hi] @ val @ w)
    return total ** (1 / q)


# ---------------------------------------------------------------------------
# controls
# ---------------------------------------------------------------------------


@dataclass
class ControlSample:
    """Values ``w(t_i, t_j)`` for ``i <= j`` stored in the upper triangle of a square array."""

    times: np.ndarray
    values: np.ndarray

    @classmethod
    def from_function(cls, w: Callable, times) -> "ControlSample":
        t = np.asarray(times, dtype=float)
        s, u = np.meshgrid(t, t, indexing="ij")
        vals = np.where(u >= s, w(s, np.maximum(u, s)), 0.0)
        return cls(t, np.triu(vals))


@dataclass
class ControlReport:
    diagonal_zero: bool
    superadditive: bool
    violations: list = field(default_factory=list)
    power_closure: bool | None = None
    product_closure: bool | None = None

    @property
    def passed(self) -> bool:
        return self.diagonal_zero and self.superadditive


def _superadditive_violations(W: np.ndarray, slack: float, limit: int = 10) -> list:
    bad = []
    n = W.shape[0]
    for u in range(n):
        lhs = W[: u + 1, u][:, None] + W[u, u:][None, :]
        rhs = W[: u + 1, u:]
        viol = lhs > rhs * (1 + slack) + 1e-300
        if viol.any():
            for i, j in np.argwhere(viol)[: limit - len(bad)]:
                bad.append((int(i), int(u), int(u + j)))
            if len(bad) >= limit:
                break
    return bad


def control_check(w: ControlSample, slack: float = 1e-9) -> ControlReport:
    """Diagonal zero, superadditivity on every grid triple and closure under powers and products."""
    W = np.triu(np.asarray(w.values, dtype=float))
    diag = bool(np.all(np.diag(W) == 0))
    bad = _superadditive_violations(W, slack)
    report = ControlReport(diag, not bad, bad)
    if report.passed:
        report.power_closure = all(not _superadditive_violations(W**p, slack, 1) for p in (1.5, 2.0, 3.0))
        t = w.times
        additive = np.triu(t[None, :] - t[:, None])
        report.product_closure = not _superadditive_violations(W * additive, slack, 1)
    return report


# ---------------------------------------------------------------------------
# rate fits
# ---------------------------------------------------------------------------


@dataclass
class RateTable:
    """Rows ``(scale, error, stderr)`` with an OLS fit of log error on log scale."""

    rows: list
    slope: float = math.nan
    intercept: float = math.nan
    r2: float = math.nan
    slope_stderr: float = math.nan
    status: str = "ok"

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scale", "error", "stderr"])
            for s, e, se in self.rows:
                w.writerow([repr(s), repr(float(e)), repr(float(se))])
        return path

    def plot_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["log_scale", "log_error"])
            for s, e, _ in self.rows:
                if e > 0:
                    w.writerow([repr(math.log(s)), repr(math.log(e))])
        return path

    def summary(self) -> dict:
        def num(x):
            return None if math.isnan(x) else x
        return {"slope": num(self.slope), "intercept": num(self.intercept), "r2": num(self.r2),
                "slope_stderr": num(self.slope_stderr), "status": self.status, "cells": len(self.rows)}

    @classmethod
    def from_csv(cls, path: str | Path) -> "RateTable":
        with Path(path).open() as fh:
            rows = []
            for rec in csv.DictReader(fh):
                try:
                    s = int(rec["scale"])
                except ValueError:
                    s = float(rec["scale"])
                rows.append((s, float(rec["error"]), float(rec["stderr"])))
        return fit_rate(rows, strict=False)

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)


def fit_rate(rows, strict: bool = True) -> RateTable:
    """OLS fit ``log error = intercept + slope log scale``.

    All-zero errors yield the status ``degenerate: zero error``; fewer than
    three rows yield ``insufficient cells``. With ``strict`` these raise
    instead, as do nonpositive errors among positive ones.
    """
    rows = [(s, float(e), float(se)) for s, e, se in rows]
    if any(not math.isfinite(e) or e < 0 or se < 0 for _, e, se in rows):
        raise InputError("errors and stderrs must be finite and nonnegative")
    if len(rows) < 3:
        if strict:
            raise InputError(f"a rate fit needs at least 3 rows, got {len(rows)}")
        return RateTable(rows, status="insufficient cells")
    errors = np.array([e for _, e, _ in rows])
    if np.all(errors == 0):
        return RateTable(rows, status="degenerate: zero error")
    if np.any(errors <= 0):
        raise InputError("cannot fit a rate through nonpositive errors")
    x = np.log([float(s) for s, _, _ in rows])
    y = np.log(errors)
    fit = stats.linregress(x, y)
    return RateTable(rows, float(fit.slope), float(fit.intercept), float(fit.rvalue**2), float(fit.stderr))
