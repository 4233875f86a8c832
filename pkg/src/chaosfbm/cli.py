"""Command-line entry point: ``chaosfbm <subcommand> --config FILE [--set key=value ...]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import canonical_json
from .dynamics import build_mkv_reference, draw_data, simulate_coupled_copies, simulate_ips, CouplingRun
from .errors import ChaosError
from .experiments import (build_kernel, evaluate_gates, fingerprint, load, load_experiment, persist,
                          run_chaos_campaign, run_moderate_campaign, run_noise_selfcheck, sim_config)
from .fbm import PathEnsemble, TimeGrid
from .kernels import kernel_report
from .metrics import coupling_error, gagliardo_seminorm, kappa_variation

EXIT_OK, EXIT_ERROR, EXIT_GATE = 0, 1, 2

log = logging.getLogger("chaosfbm")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML experiment configuration")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides output.dir)")
    common.add_argument("--set", dest="overrides", metavar="KEY=VALUE", action="append", default=[],
                        help="override a config entry, e.g. sim.hurst=0.25 (repeatable, applied left to right)")
    common.add_argument("--seed", type=int, metavar="U64", help="master seed (overrides sim.seed)")
    common.add_argument("--threads", type=int, default=1, metavar="INT",
                        help="worker threads over replicas; affects speed only, never results")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--quiet", action="store_true", help="print nothing but errors")
    verbosity.add_argument("--verbose", action="store_true", help="log progress per cell")

    p = argparse.ArgumentParser(prog="chaosfbm", description=__doc__)
    p.add_argument("--version", action="store_true", help="print the environment fingerprint and exit")
    sub = p.add_subparsers(dest="command", metavar="SUBCOMMAND")
    sub.add_parser("fbm-check", parents=[common], help="fBm law self-checks (section 'selfcheck')")
    k = sub.add_parser("kernel-info", parents=[common], help="admissibility report for the configured kernel")
    k.add_argument("--json", action="store_true", help="print the report as JSON")
    sub.add_parser("simulate", parents=[common],
                   help="one coupled run with sim.particles particles; writes trajectories if output.trajectories")
    sub.add_parser("chaos-rate", parents=[common], help="propagation-of-chaos campaign over campaign.n_grid")
    sub.add_parser("moderate-rate", parents=[common], help="campaign with the delta(N) schedule")
    m = sub.add_parser("metrics", parents=[common],
                       help="re-fit and gate a stored campaign directory, or path seminorms of a trajectory CSV")
    m.add_argument("--input", required=True, metavar="PATH", help="campaign directory or trajectory CSV")
    m.add_argument("--kappa", type=float, default=2.5, help="variation order for trajectory input")
    m.add_argument("--beta", type=float, default=0.25, help="Gagliardo order for trajectory input")
    m.add_argument("--q", type=float, default=2.0, help="Gagliardo integrability for trajectory input")
    return p


def _config(args) -> dict:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(("sim.seed", args.seed))
    if args.out:
        overrides.append(("output.dir", args.out))
    return load_experiment(args.config, overrides)


def _say(args, text: str):
    if not args.quiet:
        print(text)


def _gate_exit(args, gates) -> int:
    for g in gates:
        _say(args, f"{'PASS' if g.passed else 'FAIL'}  {g.name}: {g.detail}")
    return EXIT_OK if all(g.passed for g in gates) else EXIT_GATE


def cmd_fbm_check(args, cfg) -> int:
    sc = cfg["selfcheck"]
    report = run_noise_selfcheck(sc["hurst"], TimeGrid(cfg["sim"]["horizon"], sc["steps"]), sc["replicas"],
                                 cfg["sim"]["seed"])
    _say(args, report.to_text())
    out = Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "fbm_check.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return EXIT_OK if report.passed else EXIT_GATE


def cmd_kernel_info(args, cfg) -> int:
    report = kernel_report(build_kernel(cfg), cfg["campaign"]["q"], cfg["sim"]["hurst"])
    _say(args, report.to_json() if args.json else report.to_text())
    return EXIT_OK


def _write_paths(path: Path, ens: PathEnsemble):
    ens.to_csv(path)


def cmd_simulate(args, cfg) -> int:
    N = cfg["sim"]["particles"]
    sim = sim_config(cfg, N, M=max(cfg["campaign"]["m_factor"] * N, cfg["campaign"]["m_min"]))
    noise, initials = draw_data(sim)
    flow = build_mkv_reference(sim, sim.seed)
    ips = simulate_ips(sim, noise, initials, threads=args.threads)
    copies = simulate_coupled_copies(sim, flow, noise, initials, threads=args.threads)
    err, se = coupling_error(CouplingRun(ips, copies, noise, initials, flow), sim.moment)
    out = Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(canonical_json(cfg))
    if cfg["output"]["trajectories"]:
        ips.to_csv(out / "trajectories.csv")
        copies.to_csv(out / "copies.csv")
        noise.to_csv(out / "noise.csv")
        with (out / "initials.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["replica", "particle"] + [f"x_{c + 1}" for c in range(sim.d)])
            for r in range(sim.replicas):
                for i in range(N):
                    w.writerow([r, i] + [repr(float(v)) for v in initials[r, i]])
    summary = {"fingerprint": fingerprint(cfg), "N": N, "M": sim.M,
               "coupling_error": err, "coupling_stderr": se}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _say(args, f"N = {N}, M = {sim.M}: coupling error {err:.6g} (stderr {se:.3g}); results in {out}")
    return EXIT_OK


def _campaign(args, cfg, runner) -> int:
    result = runner(cfg, threads=args.threads)
    out = Path(cfg["output"]["dir"])
    persist(result, out)
    _say(args, result.table_text())
    _say(args, f"results in {out}")
    return _gate_exit(args, evaluate_gates(result))


def _read_trajectories(path: Path) -> dict:
    paths: dict = {}
    with path.open() as fh:
        for rec in csv.DictReader(fh):
            key = (int(rec["replica"]), int(rec["particle"]))
            coords = sorted((k for k in rec if k.startswith("x_")), key=lambda k: int(k[2:]))
            paths.setdefault(key, []).append([float(rec[k]) for k in coords])
    return {k: np.array(v) for k, v in paths.items()}


def cmd_metrics(args, cfg) -> int:
    src = Path(args.input)
    if src.is_dir():
        result = load(src)
        _say(args, result.table_text())
        return _gate_exit(args, evaluate_gates(result))
    if not src.exists():
        raise ChaosError(f"no such file or directory: {src}")
    horizon = cfg["sim"]["horizon"]
    _say(args, f"{'replica':>7} {'particle':>8} {'kappa-var':>12} {'gagliardo':>12}")
    for (r, i), y in sorted(_read_trajectories(src).items()):
        _say(args, f"{r:>7} {i:>8} {kappa_variation(y, args.kappa):>12.6g} "
                   f"{gagliardo_seminorm(y, args.beta, args.q, horizon):>12.6g}")
    return EXIT_OK


COMMANDS = {
    "fbm-check": cmd_fbm_check,
    "kernel-info": cmd_kernel_info,
    "simulate": cmd_simulate,
    "chaos-rate": lambda a, c: _campaign(a, c, run_chaos_campaign),
    "moderate-rate": lambda a, c: _campaign(a, c, run_moderate_campaign),
    "metrics": cmd_metrics,
}


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    if args.version:
        print(json.dumps(fingerprint(), sort_keys=True))
        return EXIT_OK
    if not args.command:
        parser.print_help()
        return EXIT_ERROR
    level = logging.ERROR if args.quiet else logging.INFO if args.verbose else logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except (ChaosError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
