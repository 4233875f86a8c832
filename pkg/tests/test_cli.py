import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from chaosfbm.cli import main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

SMALL = """\
sim:
  dim: 1
  hurst: 0.5
  steps: 16
  replicas: 8
  seed: 5
  init: {kind: gaussian}
kernel:
  family: smooth
  name: tanh
campaign:
  n_grid: [2, 4, 8, 16]
  metrics: [coupling]
  gates:
    coupling: {slope_max: 0.0}
"""


def write(tmp_path, text, name="c.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def read_paths(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    out = {}
    for r in rows:
        out[(int(r["replica"]), int(r["particle"]), int(r["k"]))] = float(r["x_1"])
    return out


class TestHelp:
    def test_lists_subcommands(self, capsys):
        with pytest.raises(SystemExit):
            main(["--help"])
        text = capsys.readouterr().out
        for cmd in ("fbm-check", "kernel-info", "simulate", "chaos-rate", "moderate-rate", "metrics"):
            assert cmd in text

    @pytest.mark.parametrize("cmd", ["simulate", "chaos-rate", "metrics"])
    def test_common_flags(self, cmd, capsys):
        with pytest.raises(SystemExit):
            main([cmd, "--help"])
        text = capsys.readouterr().out
        for flag in ("--config", "--out", "--set", "--seed", "--threads", "--quiet", "--verbose"):
            assert flag in text

    def test_version(self, capsys):
        assert main(["--version"]) == 0
        fp = json.loads(capsys.readouterr().out)
        assert fp["package"] == "chaosfbm" and "numpy" in fp

    def test_no_command(self, capsys):
        assert main([]) == 1

    def test_quiet_and_verbose_exclusive(self):
        with pytest.raises(SystemExit):
            main(["simulate", "--quiet", "--verbose"])

    def test_console_script_module(self):
        out = subprocess.run([sys.executable, "-m", "chaosfbm.cli", "--version"], capture_output=True, text=True)
        assert out.returncode == 0 and "chaosfbm" in out.stdout


class TestKernelInfo:
    def test_coulomb_threshold(self, capsys):
        assert main(["kernel-info", "--config", str(CONFIGS / "coulomb_info.yaml")]) == 0
        assert "H < 0.25" in capsys.readouterr().out

    def test_json(self, capsys):
        assert main(["kernel-info", "--config", str(CONFIGS / "coulomb_info.yaml"), "--json"]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["admissible"] is True

    def test_override(self, capsys):
        main(["kernel-info", "--config", str(CONFIGS / "coulomb_info.yaml"), "--set", "sim.hurst=0.3", "--json"])
        assert json.loads(capsys.readouterr().out)["admissible"] is False


class TestSimulate:
    def test_zero_kernel_trajectories(self, tmp_path, capsys):
        out = tmp_path / "run"
        assert main(["simulate", "--config", str(CONFIGS / "zero_simulate.yaml"), "--out", str(out)]) == 0
        traj, noise = read_paths(out / "trajectories.csv"), read_paths(out / "noise.csv")
        with open(out / "initials.csv") as fh:
            x0 = {(int(r["replica"]), int(r["particle"])): float(r["x_1"]) for r in csv.DictReader(fh)}
        assert len(traj) == 2 * 4 * 33
        for (r, i, k), v in traj.items():
            assert v == x0[r, i] + noise[r, i, k]
        summary = json.loads((out / "summary.json").read_text())
        assert summary["coupling_error"] == 0.0 and summary["N"] == 4

    def test_seed_flag_changes_output(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        main(["simulate", "--config", str(CONFIGS / "zero_simulate.yaml"), "--out", str(a), "--quiet"])
        main(["simulate", "--config", str(CONFIGS / "zero_simulate.yaml"), "--out", str(b), "--seed", "8", "--quiet"])
        assert (a / "noise.csv").read_bytes() != (b / "noise.csv").read_bytes()
        assert json.loads((b / "config.json").read_text())["sim"]["seed"] == 8


class TestErrors:
    def test_bad_key_reports_line(self, tmp_path, capsys):
        cfg = write(tmp_path, "sim:\n  dim: 1\n  hurst: 0.3\n  bogus: 1\n")
        assert main(["simulate", "--config", cfg]) == 1
        err = capsys.readouterr().err
        assert "sim.bogus" in err and "line 4" in err

    def test_missing_file(self, tmp_path, capsys):
        assert main(["simulate", "--config", str(tmp_path / "nope.yaml")]) == 1
        assert "error:" in capsys.readouterr().err

    def test_bad_override(self, tmp_path, capsys):
        assert main(["kernel-info", "--config", write(tmp_path, SMALL), "--set", "sim.hurst"]) == 1

    def test_unsupported_hurst(self, tmp_path, capsys):
        assert main(["simulate", "--config", write(tmp_path, SMALL), "--set", "sim.hurst=1.0",
                     "--out", str(tmp_path / "o")]) == 1


class TestCampaigns:
    def test_chaos_rate_and_metrics(self, tmp_path, capsys):
        out = tmp_path / "camp"
        assert main(["chaos-rate", "--config", write(tmp_path, SMALL), "--out", str(out)]) == 0
        text = capsys.readouterr().out
        assert "PASS  coupling slope" in text
        for name in ("config.json", "rates_coupling.csv", "plot_coupling.csv", "cells.csv", "summary.json"):
            assert (out / name).exists()
        assert main(["metrics", "--config", write(tmp_path, SMALL), "--input", str(out)]) == 0
        assert "PASS  coupling slope" in capsys.readouterr().out

    def test_gate_failure_exit_code(self, tmp_path, capsys):
        cfg = write(tmp_path, SMALL.replace("slope_max: 0.0", "slope_max: -5.0"))
        assert main(["chaos-rate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
        assert "FAIL  coupling slope" in capsys.readouterr().out

    def test_degenerate_fit_fails_gate(self, tmp_path, capsys):
        cfg = write(tmp_path, SMALL.replace("name: tanh", "name: zero"))
        assert main(["chaos-rate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
        assert "degenerate" in capsys.readouterr().out

    def test_threads_do_not_change_results(self, tmp_path):
        cfg = write(tmp_path, SMALL)
        main(["chaos-rate", "--config", cfg, "--out", str(tmp_path / "t1"), "--quiet"])
        main(["chaos-rate", "--config", cfg, "--out", str(tmp_path / "t4"), "--threads", "4", "--quiet"])
        for name in ("cells.csv", "rates_coupling.csv", "summary.json"):
            assert (tmp_path / "t1" / name).read_bytes() == (tmp_path / "t4" / name).read_bytes()

    def test_fbm_check(self, tmp_path, capsys):
        cfg = write(tmp_path, SMALL + "selfcheck:\n  hurst: [0.25, 1.5]\n  steps: 32\n  replicas: 2000\n")
        assert main(["fbm-check", "--config", cfg, "--out", str(tmp_path / "f")]) == 0
        assert json.loads((tmp_path / "f" / "fbm_check.json").read_text())["passed"]


class TestMetricsOnTrajectories:
    def test_trajectory_csv(self, tmp_path, capsys):
        out = tmp_path / "run"
        main(["simulate", "--config", str(CONFIGS / "zero_simulate.yaml"), "--out", str(out), "--quiet"])
        capsys.readouterr()
        assert main(["metrics", "--config", str(CONFIGS / "zero_simulate.yaml"),
                     "--input", str(out / "trajectories.csv"), "--kappa", "4"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].split() == ["replica", "particle", "kappa-var", "gagliardo"]
        assert len(lines) == 1 + 2 * 4
        assert all(np.isfinite(float(v)) for v in lines[1].split()[2:])

    def test_missing_input(self, tmp_path, capsys):
        assert main(["metrics", "--config", write(tmp_path, SMALL), "--input", str(tmp_path / "x.csv")]) == 1
