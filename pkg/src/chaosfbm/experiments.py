"""Rate campaigns over the particle count, noise self-checks, persistence and acceptance gates."""

from __future__ import annotations

import csv
import json
import logging
import math
import platform
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import canonical_json, config_hash, load_config
from .dynamics import (CouplingRun, InitLaw, SimConfig, build_mkv_reference, draw_data, dyadic_intervals, simulate_coupled_copies,
                       simulate_ips)
from .errors import ChaosError, DomainError, InputError
from .fbm import TimeGrid, fbm_cov, integrate_path, sample_fbm
from .kernels import Kernel, kernel_from_dict, kernel_report
from .metrics import (RateTable, coupling_samples, fit_rate, observable_samples, sobolev_sup_samples, test_function,
                      _moment_estimate)

log = logging.getLogger(__name__)

METRIC_ORDER = ("coupling", "observable", "sobolev")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def build_kernel(cfg: dict, delta: float | None = None) -> Kernel:
    spec = dict(cfg["kernel"])
    dim = cfg["sim"]["dim"]
    if spec.get("family") == "modulated":
        spec["base"] = dict(spec["base"], dim=dim)
        if delta is not None:
            spec["base"]["delta"] = delta
    else:
        spec["dim"] = dim
        if delta is not None:
            spec["delta"] = delta
    return kernel_from_dict(spec)


def build_init(cfg: dict) -> InitLaw:
    init = dict(cfg["sim"]["init"])
    for key in ("mean", "cov"):
        if isinstance(init.get(key), list):
            init[key] = tuple(tuple(v) if isinstance(v, list) else v for v in init[key])
    return InitLaw(**init)


def sim_config(cfg: dict, N: int, kernel: Kernel | None = None, M: int | None = None,
               replicas: int | None = None) -> SimConfig:
    s = cfg["sim"]
    return SimConfig(
        N=N, d=s["dim"], H=s["hurst"], grid=TimeGrid(s["horizon"], s["steps"]),
        kernel=kernel if kernel is not None else build_kernel(cfg), init=build_init(cfg),
        replicas=replicas or s["replicas"], moment=s["moment"], M=M, seed=s["seed"],
        allow_stiff=s["allow_stiff"], noise_method=s["noise_method"],
    )


def reference_size(cfg: dict, N: int) -> int:
    c = cfg["campaign"]
    return max(c["m_factor"] * N, c["m_min"])


def delta_for(cfg: dict, N: int) -> float | None:
    """Mollification width of the cell with N particles (None keeps the kernel's own)."""
    sched = cfg["campaign"]["schedule"]
    if sched["kind"] != "power":
        return None
    return sched["c"] * N ** sched["exponent"]


def fingerprint(cfg: dict | None = None) -> dict:
    out = {
        "package": "chaosfbm",
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }
    if cfg is not None:
        out["seed"] = cfg["sim"]["seed"]
        out["config_hash"] = config_hash(cfg)
    return out


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------


@dataclass
class CampaignResult:
    config: dict
    tables: dict[str, RateTable]
    cells: list[dict]
    fingerprint: dict
    timings: dict = field(default_factory=dict)
    samples: dict = field(default_factory=dict)  # metric -> N -> per-replica samples

    def table_text(self) -> str:
        metrics = [m for m in METRIC_ORDER if m in self.tables]
        head = f"{'N':>6} {'M':>6} {'delta':>10} " + " ".join(f"{m + ' err':>14} {'stderr':>10}" for m in metrics)
        lines = [head]
        for c in self.cells:
            row = f"{c['N']:>6} {c['M']:>6} {_fmt(c.get('delta')):>10} "
            if c["status"] != "ok":
                row += c["status"]
            else:
                row += " ".join(f"{c[m + '_error']:>14.6g} {c[m + '_stderr']:>10.3g}" for m in metrics)
            lines.append(row)
        for m in metrics:
            t = self.tables[m]
            if t.status == "ok":
                lines.append(f"{m}: slope {t.slope:.4f} +- {t.slope_stderr:.4f}, R^2 {t.r2:.4f}")
            else:
                lines.append(f"{m}: fit refused ({t.status})")
        return "\n".join(lines)


def _fmt(x):
    return "-" if x is None else f"{x:.4g}"


def _check_admissible(cfg: dict, kernel: Kernel):
    rep = kernel_report(kernel, cfg["campaign"]["q"], cfg["sim"]["hurst"])
    if rep.admissible:
        return
    msg = f"kernel {kernel.family} is not admissible at q = {rep.q:g}, H = {rep.H:g} ({rep.threshold_text})"
    if not cfg["campaign"]["override_admissibility"]:
        raise DomainError(msg + "; set campaign.override_admissibility to run anyway")
    warnings.warn(msg + "; running because the override is set", RuntimeWarning, stacklevel=3)


def _evaluate_cell(cfg, sim, run: CouplingRun, samples, N):
    """Per-replica samples for every requested metric."""
    c, m = cfg["campaign"], sim.moment
    ips, flow = run.ips, run.flow
    out = {}
    for metric in c["metrics"]:
        if metric == "coupling":
            out[metric] = coupling_samples(run, m)
        elif metric == "observable":
            out[metric] = observable_samples(ips, flow, test_function(c["observable"]), m)
        elif metric == "sobolev":
            lam = c["sobolev_lambda"] if c["sobolev_lambda"] is not None else sim.d / 2 + 1.1
            # plain expectation of the sup, as a first moment
            out[metric] = sobolev_sup_samples(ips, flow, lam, c["freq_samples"], sim.seed, c["time_stride"])
    for metric, s in out.items():
        samples.setdefault(metric, {})[N] = s
    return out


def _moment_for(metric: str, m: float) -> float:
    return 1.0 if metric == "sobolev" else m


def _campaign(cfg: dict, threads: int, moderate: bool) -> CampaignResult:
    c = cfg["campaign"]
    grid_n = c["n_grid"]
    cells, samples, timings = [], {}, {}
    base_kernel = build_kernel(cfg)
    flow = ref_kernel = None
    if moderate:
        if not base_kernel.singular:
            raise DomainError("moderate-interaction campaigns need a singular kernel family")
        N_max = grid_n[-1]
        ref_kernel = build_kernel(cfg, delta_for(cfg, N_max))
        _check_admissible(cfg, ref_kernel)
        ref_sim = sim_config(cfg, N_max, ref_kernel, M=reference_size(cfg, N_max), replicas=1)
        t0 = time.perf_counter()
        flow = build_mkv_reference(ref_sim, ref_sim.seed)
        timings["reference"] = time.perf_counter() - t0
    else:
        _check_admissible(cfg, base_kernel)

    for N in grid_n:
        t0 = time.perf_counter()
        delta = delta_for(cfg, N) if moderate else (base_kernel.delta or None)
        cell = {"N": N, "M": reference_size(cfg, grid_n[-1] if moderate else N), "delta": delta, "status": "ok"}
        try:
            kernel = build_kernel(cfg, delta) if moderate else base_kernel
            sim = sim_config(cfg, N, kernel, M=cell["M"])
            noise, initials = draw_data(sim)
            if moderate:
                copies_sim = sim.replace(kernel=ref_kernel)
                cell_flow = flow
            else:
                copies_sim = sim
                cell_flow = build_mkv_reference(sim, sim.seed)
            ips = simulate_ips(sim, noise, initials, threads=threads)
            copies = simulate_coupled_copies(copies_sim, cell_flow, noise, initials, threads=threads)
            run = CouplingRun(ips, copies, noise, initials, cell_flow)
            per = _evaluate_cell(cfg, sim, run, samples, N)
            for metric, s in per.items():
                err, se = _moment_estimate(s, _moment_for(metric, sim.moment))
                cell[metric + "_error"], cell[metric + "_stderr"] = err, se
        except ChaosError as exc:
            log.warning("cell N = %d failed: %s", N, exc)
            cell["status"] = f"failed: {exc}"
        timings[str(N)] = time.perf_counter() - t0
        log.info("cell N = %d done in %.1f s", N, timings[str(N)])
        cells.append(cell)

    tables = {}
    for metric in c["metrics"]:
        rows = [(cell["N"], cell[metric + "_error"], cell[metric + "_stderr"]) for cell in cells
                if cell["status"] == "ok"]
        tables[metric] = fit_rate(rows, strict=False)
    return CampaignResult(cfg, tables, cells, fingerprint(cfg), timings, samples)


def run_chaos_campaign(cfg: dict, threads: int = 1) -> CampaignResult:
    """Coupling campaign at a fixed kernel over the configured particle counts."""
    return _campaign(cfg, threads, moderate=False)


def run_moderate_campaign(cfg: dict, threads: int = 1) -> CampaignResult:
    """Campaign with ``delta(N) = c N^exponent``; a fixed schedule is the chaos campaign itself."""
    if cfg["campaign"]["schedule"]["kind"] == "fixed":
        return run_chaos_campaign(cfg, threads)
    return _campaign(cfg, threads, moderate=True)


# ---------------------------------------------------------------------------
# gates
# ---------------------------------------------------------------------------


@dataclass
class GateResult:
    name: str
    passed: bool
    detail: str


def monotone_within_stderr(rows) -> bool:
    """Each error exceeds its predecessor by at most one stderr of the difference."""
    for (_, e0, s0), (_, e1, s1) in zip(rows, rows[1:]):
        if e1 - e0 > math.hypot(s0, s1):
            return False
    return True


def evaluate_gates(result: CampaignResult) -> list[GateResult]:
    out = []
    for metric, gate in result.config["campaign"]["gates"].items():
        t = result.tables.get(metric)
        if t is None:
            out.append(GateResult(metric, False, "metric not computed"))
            continue
        if t.status != "ok":
            out.append(GateResult(metric, False, f"fit refused ({t.status})"))
            continue
        if "slope_min" in gate or "slope_max" in gate:
            lo, hi = gate.get("slope_min", -math.inf), gate.get("slope_max", math.inf)
            out.append(GateResult(f"{metric} slope", lo <= t.slope <= hi,
                                  f"slope {t.slope:.4f} in [{lo}, {hi}]"))
        if "r2_min" in gate:
            out.append(GateResult(f"{metric} R^2", t.r2 >= gate["r2_min"], f"R^2 {t.r2:.4f} >= {gate['r2_min']}"))
        if gate.get("monotone"):
            out.append(GateResult(f"{metric} monotone", monotone_within_stderr(t.rows),
                                  "errors nonincreasing within one stderr"))
    return out


# ---------------------------------------------------------------------------
# noise self-check
# ---------------------------------------------------------------------------


@dataclass
class NoiseCheck:
    H: float
    checks: dict  # name -> (passed, statistic, threshold text)

    @property
    def passed(self) -> bool:
        return all(p for p, _, _ in self.checks.values())


@dataclass
class NoiseReport:
    rows: list[NoiseCheck]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def to_text(self) -> str:
        lines = []
        for r in self.rows:
            for name, (ok, stat, rule) in r.checks.items():
                lines.append(f"H = {r.H:<5g} {name:<18} {'PASS' if ok else 'FAIL'}  {stat:.6g}  ({rule})")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"passed": self.passed,
                "rows": [{"H": r.H, "checks": {k: {"passed": p, "statistic": s, "rule": t}
                                               for k, (p, s, t) in r.checks.items()}} for r in self.rows]}


def increment_moment_zscores(paths: np.ndarray, grid: TimeGrid, H: float) -> np.ndarray:
    """``(mean |W_t - W_s|^2 - |t-s|^{2H}) / SE`` over all dyadic (s, t); ``paths`` is ``[R][n+1]``."""
    t = grid.times
    out = []
    for a, b in dyadic_intervals(grid.steps):
        sq = (paths[:, b] - paths[:, a]) ** 2
        se = np.std(sq, ddof=1) / math.sqrt(sq.size)
        out.append((np.mean(sq) - (t[b] - t[a]) ** (2 * H)) / se)
    return np.array(out)


def self_similarity_slope(paths: np.ndarray, grid: TimeGrid, min_steps: int = 1) -> float:
    """Log-log slope of ``mean W_t^2`` over dyadic t spanning at least ``min_steps`` steps."""
    ks, k = [], grid.steps
    while k >= max(1, min(min_steps, grid.steps // 4)):
        ks.append(k)
        k //= 2
    rows = [(grid.times[k], float(np.mean(paths[:, k] ** 2)), 0.0) for k in ks]
    return fit_rate(rows).slope


def run_noise_selfcheck(hursts, grid: TimeGrid, replicas: int, seed: int) -> NoiseReport:
    rows = []
    for H in hursts:
        ens = sample_fbm(grid, H, 1, replicas, seed)
        paths = ens.values[:, 0, :, 0]
        checks = {}
        # the trapezoid integral is biased over its first few steps
        slope = self_similarity_slope(paths, grid, min_steps=4 if H > 1 else 1)
        checks["self-similarity"] = (abs(slope - 2 * H) <= 0.05, slope, f"slope 2H = {2 * H:g} +- 0.05")
        if H < 1:
            z = float(np.max(np.abs(increment_moment_zscores(paths, grid, H))))
            checks["increment moments"] = (z < 5, z, "max |z| < 5 over dyadic (s,t)")
            checks["start at zero"] = (bool(np.all(ens.values[:, :, 0] == 0)), 0.0, "W_0 = 0 exactly")
            cov = float(fbm_cov(grid.horizon, grid.horizon, H))
            var = float(np.var(paths[:, -1], ddof=1))
            checks["terminal variance"] = (abs(var - cov) < 5 * cov * math.sqrt(2 / replicas), var,
                                           f"T^2H = {cov:g} within 5 SE")
        if abs(H - 0.5) < 1e-12:
            inc = np.diff(paths, axis=1)
            n = inc.shape[1]
            corr = max(abs(float(np.corrcoef(inc[:, k], inc[:, k + 1])[0, 1])) for k in range(0, n - 1, max(1, n // 8)))
            checks["independence"] = (corr < 4 / math.sqrt(replicas), corr, "|corr| < 4/sqrt(R)")
        if H > 1:
            base = sample_fbm(grid, H - 1, 1, replicas, seed).values
            same = bool(np.array_equal(integrate_path(base, grid), ens.values))
            checks["integral identity"] = (same, 0.0 if same else 1.0, "path = trapezoid of (H-1)-path, exactly")
        rows.append(NoiseCheck(float(H), checks))
    return NoiseReport(rows)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def persist(result: CampaignResult, directory: str | Path) -> list[Path]:
    """Write config.json, per-metric rate and plot CSVs, cells.csv, summary.json and timings.json.

    Everything except timings.json is a deterministic function of the config.
    """
    d = Path(directory)
    try:
        d.mkdir(parents=True, exist_ok=True)
        written = [d / "config.json"]
        written[0].write_text(canonical_json(result.config))
        for metric, table in result.tables.items():
            written.append(table.to_csv(d / f"rates_{metric}.csv"))
            written.append(table.plot_csv(d / f"plot_{metric}.csv"))
        cells_path = d / "cells.csv"
        metrics = list(result.tables)
        with cells_path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["N", "M", "delta", "status"] + [f"{m}_{k}" for m in metrics for k in ("error", "stderr")])
            for c in result.cells:
                vals = [repr(c.get(f"{m}_{k}")) if f"{m}_{k}" in c else "" for m in metrics for k in ("error", "stderr")]
                w.writerow([c["N"], c["M"], "" if c["delta"] is None else repr(c["delta"]), c["status"]] + vals)
        written.append(cells_path)
        summary = {"fingerprint": result.fingerprint,
                   "fits": {m: t.summary() for m, t in result.tables.items()},
                   "gates": [g.__dict__ for g in evaluate_gates(result)]}
        written.append(d / "summary.json")
        written[-1].write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        written.append(d / "timings.json")
        written[-1].write_text(json.dumps(result.timings, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write results to {d}: {exc.strerror}") from exc
    return written


def load(directory: str | Path) -> CampaignResult:
    d = Path(directory)
    try:
        cfg = json.loads((d / "config.json").read_text())
        summary = json.loads((d / "summary.json").read_text())
        tables = {m: RateTable.from_csv(d / f"rates_{m}.csv") for m in cfg["campaign"]["metrics"]}
        with (d / "cells.csv").open() as fh:
            cells = []
            for rec in csv.DictReader(fh):
                cell = {"N": int(rec.pop("N")), "M": int(rec.pop("M")), "status": rec.pop("status")}
                delta = rec.pop("delta")
                cell["delta"] = float(delta) if delta else None
                cell.update({k: float(v) for k, v in rec.items() if v})
                cells.append(cell)
        timings_path = d / "timings.json"
        timings = json.loads(timings_path.read_text()) if timings_path.exists() else {}
    except OSError as exc:
        raise OSError(f"cannot read results from {d}: {exc.strerror}") from exc
    except (KeyError, ValueError) as exc:
        raise InputError(f"malformed results in {d}: {exc}") from exc
    return CampaignResult(cfg, tables, cells, summary["fingerprint"], timings)


def load_experiment(path=None, overrides=(), text=None) -> dict:
    """Config file plus overrides, validated."""
    return load_config(path, overrides, text)
