import json
import math

import numpy as np
import pytest

from chaosfbm.config import config_hash, load_config, parse_override
from chaosfbm.dynamics import draw_data
from chaosfbm.errors import ConfigError, DomainError
from chaosfbm.experiments import (build_kernel, delta_for, evaluate_gates, load, monotone_within_stderr, persist,
                                  run_chaos_campaign, run_moderate_campaign, run_noise_selfcheck, sim_config)
from chaosfbm.fbm import TimeGrid
from chaosfbm.metrics import bootstrap_stderr, fit_rate

SMALL = """\
sim:
  dim: 1
  hurst: 0.5
  steps: 16
  replicas: 12
  seed: 5
  init: {kind: gaussian}
kernel:
  family: smooth
  name: tanh
campaign:
  n_grid: [2, 4, 8, 16]
  metrics: [coupling, observable, sobolev]
  freq_samples: 64
  time_stride: 4
  gates:
    coupling: {slope_max: 0.0}
"""

MODERATE = """\
sim:
  dim: 2
  hurst: 0.2
  steps: 16
  replicas: 6
  seed: 3
  init: {kind: gaussian, mean: [0.0, 0.0]}
  allow_stiff: true
kernel:
  family: log
  delta: 0.5
campaign:
  n_grid: [2, 4, 8, 16]
  schedule: {kind: power, c: 0.5, exponent: -0.5}
  gates:
    coupling: {monotone: true}
"""


def cfg(text=SMALL, *overrides):
    return load_config(text=text, overrides=[parse_override(o) for o in overrides])


@pytest.fixture(scope="module")
def smooth_result():
    return run_chaos_campaign(cfg())


class TestConfig:
    def test_defaults_filled(self):
        c = cfg()
        assert c["sim"]["horizon"] == 1.0 and c["campaign"]["m_factor"] == 4 and c["output"]["dir"] == "out"

    @pytest.mark.parametrize("text,key,line", [
        ("sim:\n  dim: 1\n  bogus: 3\n", "sim.bogus", 3),
        ("sim:\n  dim: 1\n  steps: many\n", "sim.steps", 3),
        ("sim:\n  dim: 1\nkernel:\n  family: smooth\n  name: tanh\n  delta: x\n", "kernel.delta", 6),
        ("sim:\n  dim: 1\ncampaign:\n  schedule: {kind: power, c: -1.0}\n", "campaign.schedule.c", 4),
    ])
    def test_errors_carry_key_and_line(self, text, key, line):
        with pytest.raises(ConfigError) as info:
            load_config(text=text)
        assert info.value.key == key and info.value.line == line
        assert f"line {line}" in str(info.value)

    @pytest.mark.parametrize("grid", ["[4, 8, 16]", "[4, 8, 8, 16]", "[1, 2, 4, 8]"])
    def test_n_grid_rules(self, grid):
        with pytest.raises(ConfigError) as info:
            cfg(SMALL, f"campaign.n_grid={grid}")
        assert info.value.key == "campaign.n_grid"

    def test_unknown_section(self):
        with pytest.raises(ConfigError):
            load_config(text="simulation:\n  dim: 1\n")

    def test_overrides_compose_left_to_right(self):
        c = cfg(SMALL, "sim.hurst=0.25", "sim.hurst=0.3", "campaign.n_grid=[2, 4, 8, 16]")
        assert c["sim"]["hurst"] == 0.3 and c["campaign"]["n_grid"] == [2, 4, 8, 16]

    def test_override_type_checked(self):
        with pytest.raises(ConfigError):
            cfg(SMALL, "sim.steps=abc")
        with pytest.raises(ConfigError):
            cfg(SMALL, "sim.nonsense=1")

    def test_override_syntax(self):
        with pytest.raises(ConfigError):
            parse_override("sim.hurst")

    def test_hash_tracks_semantic_fields_only(self):
        base = config_hash(cfg())
        assert config_hash(cfg(SMALL, "output.dir=elsewhere")) == base
        assert config_hash(cfg(SMALL, "output.trajectories=true")) == base
        assert config_hash(cfg(SMALL, "sim.seed=6")) != base
        assert config_hash(cfg(SMALL, "kernel.name=sin")) != base
        assert config_hash(cfg()) == base


class TestBuilders:
    def test_delta_schedule(self):
        c = cfg(MODERATE)
        assert delta_for(c, 100) == pytest.approx(0.05, rel=1e-14)
        assert delta_for(cfg(), 100) is None
        assert build_kernel(c, 0.1).delta == 0.1

    def test_prefix_across_cells(self):
        c = cfg()
        n4, x4 = draw_data(sim_config(c, 4))
        n16, x16 = draw_data(sim_config(c, 16))
        assert np.array_equal(n16.values[:, :4], n4.values)
        assert np.array_equal(x16[:, :4], x4)


class TestChaosCampaign:
    def test_cells_and_tables(self, smooth_result):
        assert [cell["N"] for cell in smooth_result.cells] == [2, 4, 8, 16]
        assert all(cell["status"] == "ok" and cell["M"] == 4 * cell["N"] for cell in smooth_result.cells)
        for m in ("coupling", "observable", "sobolev"):
            assert smooth_result.tables[m].status == "ok"
        assert smooth_result.tables["coupling"].slope < 0
        text = smooth_result.table_text()
        assert "coupling: slope" in text and text.splitlines()[0].split()[0] == "N"

    def test_bootstrap_matches_reported_stderr(self, smooth_result):
        cell = smooth_result.cells[-1]
        boot = bootstrap_stderr(smooth_result.samples["coupling"][16], 2.0)
        assert cell["coupling_stderr"] / 1.5 <= boot <= cell["coupling_stderr"] * 1.5

    def test_constant_kernel_refuses_fit(self):
        c = cfg(SMALL, "kernel.name=constant", "kernel.value=[0.25]", "campaign.metrics=[coupling]")
        result = run_chaos_campaign(c)
        assert result.tables["coupling"].status == "degenerate: zero error"
        assert all(cell["coupling_error"] == 0.0 for cell in result.cells)
        gate = evaluate_gates(result)[0]
        assert not gate.passed and "degenerate" in gate.detail

    def test_gates(self, smooth_result):
        gates = evaluate_gates(smooth_result)
        assert [g.name for g in gates] == ["coupling slope"] and gates[0].passed

    def test_inadmissible_refused(self):
        c = cfg(MODERATE, "sim.hurst=0.4", "campaign.schedule={kind: fixed}")
        with pytest.raises(DomainError):
            run_chaos_campaign(c)
        c = cfg(MODERATE, "sim.hurst=0.4", "campaign.schedule={kind: fixed}", "campaign.override_admissibility=true",
                "campaign.n_grid=[2, 4, 8, 16]")
        with pytest.warns(RuntimeWarning, match="override"):
            assert len(run_chaos_campaign(c).cells) == 4


@pytest.mark.filterwarnings("ignore:step dt")
class TestModerateCampaign:
    def test_fixed_schedule_is_chaos_campaign(self):
        c = cfg(MODERATE, "campaign.schedule={kind: fixed}")
        a, b = run_moderate_campaign(c), run_chaos_campaign(c)
        assert a.cells == b.cells
        assert a.tables["coupling"].slope == b.tables["coupling"].slope

    def test_schedule_applied(self):
        result = run_moderate_campaign(cfg(MODERATE))
        assert [cell["delta"] for cell in result.cells] == pytest.approx([0.5 / math.sqrt(2), 0.25, 0.5 / math.sqrt(8), 0.125], rel=1e-14)
        assert all(cell["M"] == 64 for cell in result.cells)

    def test_needs_singular_kernel(self):
        with pytest.raises(DomainError):
            run_moderate_campaign(cfg(SMALL, "campaign.schedule={kind: power, c: 1.0, exponent: -0.5}"))


class TestMonotoneGate:
    def test_within_one_stderr(self):
        assert monotone_within_stderr([(8, 1.0, 0.1), (16, 1.1, 0.1), (32, 0.5, 0.1)])
        assert not monotone_within_stderr([(8, 1.0, 0.1), (16, 1.2, 0.1)])


class TestPersistence:
    def test_round_trip(self, smooth_result, tmp_path):
        persist(smooth_result, tmp_path)
        back = load(tmp_path)
        assert back.config == smooth_result.config
        assert back.cells == smooth_result.cells
        for m, t in smooth_result.tables.items():
            assert back.tables[m].rows == t.rows and back.tables[m].slope == t.slope
        assert [g.__dict__ for g in evaluate_gates(back)] == [g.__dict__ for g in evaluate_gates(smooth_result)]

    def test_rerun_byte_identical(self, smooth_result, tmp_path):
        persist(smooth_result, tmp_path / "a")
        persist(run_chaos_campaign(cfg(), threads=3), tmp_path / "b")
        for f in sorted((tmp_path / "a").iterdir()):
            if f.name != "timings.json":
                assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name

    def test_summary_fingerprint(self, smooth_result, tmp_path):
        persist(smooth_result, tmp_path)
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["fingerprint"]["config_hash"] == config_hash(cfg())
        assert summary["fingerprint"]["seed"] == 5

    def test_load_missing(self, tmp_path):
        with pytest.raises(OSError):
            load(tmp_path / "nothing")


@pytest.fixture(scope="module")
def report():
    return run_noise_selfcheck([0.25, 0.5, 1.5], TimeGrid(1.0, 32), 4000, 11)


class TestNoiseSelfcheck:
    def test_passes(self, report):
        assert report.passed, report.to_text()

    def test_checks_present(self, report):
        names = {r.H: set(r.checks) for r in report.rows}
        assert "independence" in names[0.5] and "independence" not in names[0.25]
        assert names[1.5] == {"self-similarity", "integral identity"}
        assert report.rows[2].checks["integral identity"][0]

    def test_slopes(self, report):
        for r in report.rows:
            assert abs(r.checks["self-similarity"][1] - 2 * r.H) < 0.05

    def test_serializable(self, report):
        assert json.loads(json.dumps(report.to_dict()))["passed"] is True


def test_fit_rate_on_campaign_rows(smooth_result):
    t = smooth_result.tables["coupling"]
    assert fit_rate(t.rows).slope == t.slope
