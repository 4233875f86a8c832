"""YAML experiment configuration: schema, defaults, line-numbered errors and ``key=value`` overrides."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import yaml

from .errors import ConfigError

# section -> key -> (type tag, default)
SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "sim": {
        "dim": ("int", 1),
        "hurst": ("float", 0.5),
        "horizon": ("float", 1.0),
        "steps": ("int", 256),
        "replicas": ("int", 200),
        "particles": ("int", 16),
        "moment": ("float", 2.0),
        "seed": ("int", 0),
        "init": ("dict", {"kind": "point", "mean": 0.0}),
        "allow_stiff": ("bool", False),
        "noise_method": ("str", "cholesky"),
    },
    "kernel": {},  # free-form, validated by the kernel catalog
    "campaign": {
        "n_grid": ("list[int]", [8, 16, 32, 64, 128, 256]),
        "m_factor": ("int", 4),
        "m_min": ("int", 0),
        "schedule": ("dict", {"kind": "fixed"}),
        "metrics": ("list[str]", ["coupling"]),
        "observable": ("str", "tanh"),
        "sobolev_lambda": ("float?", None),
        "freq_samples": ("int", 512),
        "time_stride": ("int", 8),
        "q": ("float", 2.0),
        "override_admissibility": ("bool", False),
        "gates": ("dict", {}),
    },
    "selfcheck": {
        "hurst": ("list[float]", [0.25, 0.5, 0.75, 1.5]),
        "steps": ("int", 64),
        "replicas": ("int", 20000),
    },
    "output": {
        "dir": ("str", "out"),
        "trajectories": ("bool", False),
    },
}

KERNEL_KEYS = {
    "smooth": {"name", "value"},
    "additive": {"f", "g", "h"},
    "riesz": {"s", "delta", "matrix", "box_diameter"},
    "log": {"delta", "matrix", "box_diameter"},
    "dirac": {"direction", "delta"},
    "modulated": {"base", "gamma", "shift"},
}

SCHEDULE_KEYS = {"fixed": set(), "power": {"c", "exponent"}}
METRICS = {"coupling", "observable", "sobolev"}
GATE_KEYS = {"slope_min", "slope_max", "r2_min", "monotone"}

# sections that do not change results
NON_SEMANTIC = {"output"}


def _line_map(text: str) -> dict[tuple, int]:
    """1-based line of every mapping key, addressed by its key path."""
    out: dict[tuple, int] = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = path + (k.value,)
                out[key] = k.start_mark.line + 1
                walk(v, key)

    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {exc}", line=mark.line + 1 if mark else None) from None
    if root is not None:
        walk(root, ())
    return out


def _check_type(tag: str, value, key: str, line: int | None):
    def bad():
        raise ConfigError(f"expected {tag}, got {value!r}", key, line)

    base = tag.rstrip("?")
    if tag.endswith("?") and value is None:
        return None
    if base == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            bad()
    elif base == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            bad()
        return float(value)
    elif base == "bool":
        if not isinstance(value, bool):
            bad()
    elif base == "str":
        if not isinstance(value, str):
            bad()
    elif base == "dict":
        if not isinstance(value, dict):
            bad()
    elif base.startswith("list["):
        inner = base[5:-1]
        if not isinstance(value, list):
            bad()
        return [_check_type(inner, v, key, line) for v in value]
    return value


def _validate(cfg: dict, lines: dict) -> dict:
    out = {}
    if not isinstance(cfg, dict):
        raise ConfigError("top level must be a mapping of sections")
    for section in cfg:
        if section not in SCHEMA:
            raise ConfigError(f"unknown section (expected one of {sorted(SCHEMA)})", section, lines.get((section,)))
    for section, keys in SCHEMA.items():
        given = cfg.get(section) or {}
        if not isinstance(given, dict):
            raise ConfigError("section must be a mapping", section, lines.get((section,)))
        if section == "kernel":
            out["kernel"] = _validate_kernel(given, lines, ("kernel",))
            continue
        sec = {}
        for key, value in given.items():
            if key not in keys:
                raise ConfigError(f"unknown key in section '{section}'", f"{section}.{key}",
                                  lines.get((section, key)))
        for key, (tag, default) in keys.items():
            if key in given:
                sec[key] = _check_type(tag, given[key], f"{section}.{key}", lines.get((section, key)))
            else:
                sec[key] = copy.deepcopy(default)
        out[section] = sec
    _validate_campaign(out["campaign"], lines)
    _validate_sim(out["sim"], lines)
    return out


def _validate_sim(sim: dict, lines):
    for key in ("dim", "steps", "replicas", "particles"):
        if sim[key] < 1:
            raise ConfigError("must be positive", f"sim.{key}", lines.get(("sim", key)))
    if sim["horizon"] <= 0:
        raise ConfigError("must be positive", "sim.horizon", lines.get(("sim", "horizon")))
    if not 0 <= sim["seed"] < 2**64:
        raise ConfigError("seed must fit in an unsigned 64-bit integer", "sim.seed", lines.get(("sim", "seed")))
    if sim["noise_method"] not in ("cholesky", "circulant"):
        raise ConfigError("expected cholesky or circulant", "sim.noise_method", lines.get(("sim", "noise_method")))
    allowed = {"kind", "mean", "std", "cov", "low", "high"}
    for key in sim["init"]:
        if key not in allowed:
            raise ConfigError("unknown initial-law key", f"sim.init.{key}", lines.get(("sim", "init", key)))


def _validate_kernel(given: dict, lines, path) -> dict:
    family = given.get("family", "smooth")
    where = ".".join(path)
    if family not in KERNEL_KEYS:
        raise ConfigError(f"unknown kernel family {family!r} (expected one of {sorted(KERNEL_KEYS)})",
                          f"{where}.family", lines.get(path + ("family",)))
    for key in given:
        if key != "family" and key not in KERNEL_KEYS[family]:
            raise ConfigError(f"key not valid for the {family} family", f"{where}.{key}", lines.get(path + (key,)))
    out = dict(given)
    out["family"] = family
    if family == "modulated":
        if not isinstance(given.get("base"), dict):
            raise ConfigError("modulated kernels need a base mapping", f"{where}.base", lines.get(path + ("base",)))
        out["base"] = _validate_kernel(given["base"], lines, path + ("base",))
    if family == "smooth":
        out.setdefault("name", "tanh")
    return out


def _validate_campaign(c: dict, lines):
    def line(*k):
        return lines.get(("campaign",) + k)

    grid = c["n_grid"]
    if len(grid) < 4 or any(n < 2 for n in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError("n_grid must hold at least 4 strictly increasing integers >= 2", "campaign.n_grid",
                          line("n_grid"))
    if c["m_factor"] < 4:
        raise ConfigError("m_factor must be at least 4", "campaign.m_factor", line("m_factor"))
    for m in c["metrics"]:
        if m not in METRICS:
            raise ConfigError(f"unknown metric {m!r} (expected a subset of {sorted(METRICS)})",
                              "campaign.metrics", line("metrics"))
    sched = c["schedule"]
    kind = sched.get("kind", "fixed")
    if kind not in SCHEDULE_KEYS:
        raise ConfigError("schedule kind must be fixed or power", "campaign.schedule.kind", line("schedule", "kind"))
    for key in sched:
        if key != "kind" and key not in SCHEDULE_KEYS[kind]:
            raise ConfigError("unknown schedule key", f"campaign.schedule.{key}", line("schedule", key))
    if kind == "power":
        sched.setdefault("exponent", -0.5)
        if "c" not in sched or not isinstance(sched["c"], (int, float)) or sched["c"] <= 0:
            raise ConfigError("power schedule needs a positive c", "campaign.schedule.c", line("schedule", "c"))
    sched["kind"] = kind
    for metric, gate in c["gates"].items():
        if metric not in METRICS or not isinstance(gate, dict):
            raise ConfigError("gates map a metric name to bounds", f"campaign.gates.{metric}", line("gates", metric))
        for key in gate:
            if key not in GATE_KEYS:
                raise ConfigError(f"unknown gate (expected one of {sorted(GATE_KEYS)})",
                                  f"campaign.gates.{metric}.{key}", line("gates", metric, key))
    if c["freq_samples"] < 1 or c["time_stride"] < 1:
        raise ConfigError("freq_samples and time_stride must be positive", "campaign", line())


def _set_path(cfg: dict, dotted: str, value):
    parts = dotted.split(".")
    section = parts[0]
    if section not in SCHEMA:
        raise ConfigError(f"unknown section in override (expected one of {sorted(SCHEMA)})", dotted)
    if section != "kernel" and len(parts) >= 2 and parts[1] not in SCHEMA[section]:
        raise ConfigError(f"unknown key in section '{section}'", dotted)
    node = cfg.setdefault(section, {})
    for p in parts[1:-1]:
        nxt = node.get(p)
        if nxt is None:
            nxt = node[p] = {}
        if not isinstance(nxt, dict):
            raise ConfigError("cannot descend into a non-mapping value", dotted)
        node = nxt
    if len(parts) < 2:
        raise ConfigError("override must name section.key", dotted)
    node[parts[-1]] = value


def parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = yaml.safe_load(raw) if raw.strip() else ""
    except yaml.YAMLError:
        raise ConfigError(f"cannot parse override value {raw!r}", key.strip()) from None
    return key.strip(), value


def load_config(path: str | Path | None = None, overrides=(), text: str | None = None) -> dict:
    """Read, apply overrides left to right, fill defaults and validate."""
    if text is None and path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    text = text or ""
    lines = _line_map(text)
    raw = yaml.safe_load(text) or {}
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping of sections")
    for item in overrides:
        key, value = parse_override(item) if isinstance(item, str) else item
        _set_path(raw, key, value)
    return _validate(raw, lines)


def canonical_json(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def semantic_part(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if k not in NON_SEMANTIC}


def config_hash(cfg: dict) -> str:
    """sha256 over the canonical serialization of the fields that affect results."""
    blob = json.dumps(semantic_part(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
