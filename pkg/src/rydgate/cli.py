"""Command-line front end: ``rydgate run <config.yaml> [--set key=value] [--out DIR] [--jobs N] [--seed S]``.

A scenario is a YAML mapping. Every physical quantity carries its unit in
the key name (``_ns``, ``_mhz``, ``_ghz``, ``_khz``, ``_um``); Rabi
frequencies are quoted as ``Omega / 2 pi`` in MHz. Example::

    kind: simulate
    seed: 0
    output: runs/fig2
    params: {u_mhz: 57.26}
    schedule: {scheme: simultaneous, t_pi_ns: 50, t_2pi_ns: 800}

Top-level keys are ``kind``, ``seed``, ``output`` and the sections of
:data:`SCHEMA`; unknown keys are rejected. Scan axes accept either a list or
a mapping ``{start, stop, num}`` (inclusive linear spacing).

Exit status: 0 on success, 2 for configuration errors, 3 for numerical
failures, 4 for I/O errors. Failures print one JSON object to stderr.
A successful run writes ``manifest.json`` next to its artifacts; passing the
manifest back to ``run`` repeats the scenario.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy
import yaml

from rydgate import __version__
from rydgate.calibration import SCAN_DT, calibrated_schedule
from rydgate.core import SystemParams, basis_vector, khz, mhz
from rydgate.dynamics import (
    PropagationError,
    density_from_state,
    logical_basis_operators,
    logical_evolution_map,
    propagate_lindblad,
    propagate_operators,
    propagate_unitary,
)
from rydgate.krotov import EnsembleSpec, KrotovConfig, KrotovError, optimize
from rydgate.metrics import (
    blockade_efficiency,
    cphase_target,
    gate_report,
    liouville_fidelity,
    regime_diagnostics,
)
from rydgate.pulses import (
    CHANNELS,
    DEFAULT_DT,
    PulseSchedule,
    read_controls_csv,
    spectrum,
    write_controls_csv,
    write_spectrum_csv,
)
from rydgate.robustness import NoiseSpec, robustness_sweep
from rydgate.scans import (
    SPEED_LIMIT_COLUMNS,
    STIRAP_COLUMNS,
    speed_limit_scan,
    stirap_amplitude_scan,
    write_rows_csv,
)

log = logging.getLogger("rydgate")

KINDS = ("simulate", "speed_limit_scan", "stirap_amplitude_scan", "robustness_sweep", "optimize")

# section -> key -> default (None: optional without default)
SCHEMA = {
    "params": {
        "delta1_ghz": 1.273,
        "delta2_mhz": 0.0,
        "e1_ghz": 9.100,
        "u_mhz": 57.26,
        "tau_i_ns": 150.0,
        "atom_separation_um": 5.0,
    },
    "schedule": {
        "scheme": None,
        "path": None,
        "t_pi_ns": None,
        "t_2pi_ns": None,
        "t_gate_ns": None,
        "amp_pi_mhz": None,
        "amp_2pi_mhz": None,
        "t_left_ns": None,
        "t_right_ns": None,
        "overlap_ns": None,
        "amp_left_mhz": None,
        "amp_right_mhz": None,
        "delay_fraction": 0.35,
    },
    "propagation": {"dt_ns": None, "n_steps": None, "lindblad": False, "stride": 1},
    "simulate": {"initial": "00", "record": None},
    "speed_limit_scan": {"t_pi_ns": 50.0, "t_2pi_ns": None},
    "stirap_amplitude_scan": {
        "t_left_ns": None,
        "t_right_ns": None,
        "amp_left_mhz": None,
        "amp_right_mhz": None,
        "delay_fraction": 0.35,
    },
    "noise": {"sigma_time_ns": None, "sigma_amp_fraction": None, "sigma_ryd_khz": None, "n_samples": 1000},
    "ensemble": {"n_members": 24, "ryd_range_khz": 300.0, "amp_range": 0.05},
    "krotov": {
        "lambdas": None,
        "update_fraction": 0.01,
        "max_iters": 50,
        "tol": 1e-9,
        "normalized": True,
        "monotonic_slack": 1e-8,
        "compress": True,
    },
}
TOP_LEVEL = {"kind": None, "seed": 0, "output": "out"}

SCHEME_KEYS = {
    "simultaneous": ("t_pi_ns", "t_2pi_ns"),
    "stirap": ("t_left_ns", "t_right_ns"),
    "mixed": ("t_left_ns", "t_right_ns", "overlap_ns"),
    "overlapped": ("t_gate_ns",),
    "file": ("path",),
}
NOISE_AXES = {"sigma_time_ns": "time", "sigma_amp_fraction": "amp", "sigma_ryd_khz": "ryd"}


class ConfigError(ValueError):
    """Invalid or incomplete scenario configuration (exit status 2)."""


class NumericalError(RuntimeError):
    """Numerical failure during a run (exit status 3)."""


# ------------------------------------------------------------------ config


def load_config(path) -> dict:
    """Read a scenario file or a manifest written by a previous run."""
    text = Path(path).read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a mapping")
    if "config" in doc and "versions" in doc:
        doc = doc["config"]
    return doc


def apply_override(cfg: dict, item: str) -> None:
    """Apply ``section.key=value`` (value parsed as YAML) in place."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value {raw!r}") from exc
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r} descends into a non-mapping")
    node[parts[-1]] = value


def resolve_config(raw: dict, base_dir=None) -> dict:
    """Validate keys, fill defaults and check the fields required by ``kind``."""
    unknown = set(raw) - set(TOP_LEVEL) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    cfg = {k: raw.get(k, v) for k, v in TOP_LEVEL.items()}
    if cfg["kind"] not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}, got {cfg['kind']!r}")
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool) or cfg["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    for section, defaults in SCHEMA.items():
        given = raw.get(section) or {}
        if not isinstance(given, dict):
            raise ConfigError(f"section {section!r} must be a mapping")
        bad = set(given) - set(defaults)
        if bad:
            raise ConfigError(f"unknown keys in {section!r}: {sorted(bad)}")
        cfg[section] = {k: given.get(k, v) for k, v in defaults.items()}
    sched = cfg["schedule"]
    if sched["path"] is not None and base_dir is not None:
        sched["path"] = str((Path(base_dir) / sched["path"]).resolve())
    _check_required(cfg)
    return cfg


def _require(cfg, section, keys):
    missing = [k for k in keys if cfg[section][k] is None]
    if missing:
        raise ConfigError(f"kind {cfg['kind']!r} needs {section}.{', '.join(missing)}")


def _check_required(cfg):
    kind = cfg["kind"]
    if kind in ("simulate", "robustness_sweep", "optimize"):
        scheme = cfg["schedule"]["scheme"]
        if scheme not in SCHEME_KEYS:
            raise ConfigError(f"schedule.scheme must be one of {tuple(SCHEME_KEYS)}, got {scheme!r}")
        _require(cfg, "schedule", SCHEME_KEYS[scheme])
    if kind == "speed_limit_scan":
        _require(cfg, "speed_limit_scan", ("t_2pi_ns",))
    if kind == "stirap_amplitude_scan":
        _require(cfg, "stirap_amplitude_scan", ("t_left_ns", "t_right_ns", "amp_right_mhz"))
    if kind == "robustness_sweep":
        given = [k for k in NOISE_AXES if cfg["noise"][k] is not None]
        if len(given) != 1:
            raise ConfigError("robustness_sweep needs exactly one of " + ", ".join(NOISE_AXES))


def axis_values(spec, name: str) -> np.ndarray:
    """A scan axis from a list or a ``{start, stop, num}`` mapping."""
    if isinstance(spec, dict):
        if set(spec) != {"start", "stop", "num"}:
            raise ConfigError(f"{name}: range needs exactly start, stop and num")
        return np.linspace(float(spec["start"]), float(spec["stop"]), int(spec["num"]))
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return np.array([float(spec)])
    if isinstance(spec, list) and spec:
        return np.array([float(x) for x in spec])
    raise ConfigError(f"{name}: expected a number, a non-empty list or a range mapping")


# ------------------------------------------------------------------ building blocks


def build_params(cfg) -> SystemParams:
    return SystemParams.from_units(**{k: float(v) for k, v in cfg["params"].items()})


def _opt_mhz(value):
    return None if value is None else mhz(float(value))


def build_schedule(cfg, params, dt):
    """``(PulseSchedule or None, ControlSet or None)``; file schedules return controls only."""
    s = cfg["schedule"]
    scheme = s["scheme"]
    if scheme == "file":
        return None, read_controls_csv(s["path"])
    kw = {"delay_fraction": float(s["delay_fraction"])}
    for key in SCHEME_KEYS[scheme]:
        kw[key[:-3]] = float(s[key])
    if scheme in ("simultaneous", "overlapped"):
        kw.update(amp_pi=_opt_mhz(s["amp_pi_mhz"]), amp_2pi=_opt_mhz(s["amp_2pi_mhz"]))
        kw.pop("delay_fraction")
    else:
        kw.update(amp_left=_opt_mhz(s["amp_left_mhz"]), amp_right=_opt_mhz(s["amp_right_mhz"]))
    return calibrated_schedule(params, scheme, dt, **kw), None


def render(cfg, schedule: PulseSchedule, controls, default_dt):
    if controls is not None:
        return controls
    prop = cfg["propagation"]
    if prop["n_steps"] is not None:
        return schedule.render(n_steps=int(prop["n_steps"]))
    return schedule.render(dt=float(prop["dt_ns"] or default_dt))


def _dt(cfg, default):
    return float(cfg["propagation"]["dt_ns"] or default)


def _target(params, controls):
    return cphase_target(np.pi, params.e1 * controls.grid.duration)


# ------------------------------------------------------------------ kinds


def run_simulate(cfg, params, out: Path, jobs: int) -> None:
    dt = _dt(cfg, DEFAULT_DT)
    schedule, controls = build_schedule(cfg, params, dt)
    controls = render(cfg, schedule, controls, dt)
    sim = cfg["simulate"]
    stride = int(cfg["propagation"]["stride"])
    psi0 = basis_vector(str(sim["initial"]))
    record = sim["record"]
    if cfg["propagation"]["lindblad"]:
        _, traj = propagate_lindblad(params, controls, density_from_state(psi0), record=record, stride=stride)
        columns = [f"P_{k}" for k in traj.populations]
    else:
        _, traj = propagate_unitary(params, controls, psi0, record=record, stride=stride)
        columns = traj.columns()
    write_controls_csv(controls, out / "controls.csv")
    traj.to_csv(out / "trajectory.csv", columns)
    target = _target(params, controls)
    U = logical_evolution_map(params, controls)
    _, t10 = propagate_unitary(params, controls, basis_vector("10"), record=["1r"], stride=stride)
    _, t00 = propagate_unitary(params, controls, basis_vector("00"), record=["rr"], stride=stride)
    peaks = {
        "max_P_1r": float(t10.populations["1r"].max()),
        "max_P_rr": float(t00.populations["rr"].max()),
    }
    report = gate_report(U, target, peaks, blockade_efficiency(t10, t00)).to_dict()
    if cfg["propagation"]["lindblad"]:
        finals = propagate_operators(params, controls, logical_basis_operators())
        report["lindblad_fidelity"] = liouville_fidelity(finals, target)
    report["diagnostics"] = regime_diagnostics(params, controls)
    _write_json(out / "gate_report.json", report)


def run_speed_limit_scan(cfg, params, out: Path, jobs: int) -> None:
    sec = cfg["speed_limit_scan"]
    values = axis_values(sec["t_2pi_ns"], "speed_limit_scan.t_2pi_ns")
    rows = speed_limit_scan(params, float(sec["t_pi_ns"]), values, _dt(cfg, SCAN_DT), jobs)
    write_rows_csv(rows, SPEED_LIMIT_COLUMNS, out / "speed_limit.csv")


def run_stirap_amplitude_scan(cfg, params, out: Path, jobs: int) -> None:
    sec = cfg["stirap_amplitude_scan"]
    amps = mhz(axis_values(sec["amp_right_mhz"], "stirap_amplitude_scan.amp_right_mhz"))
    rows = stirap_amplitude_scan(
        params,
        float(sec["t_left_ns"]),
        float(sec["t_right_ns"]),
        amps,
        _opt_mhz(sec["amp_left_mhz"]),
        float(sec["delay_fraction"]),
        _dt(cfg, SCAN_DT),
        jobs,
    )
    write_rows_csv(rows, STIRAP_COLUMNS, out / "stirap_scan.csv")


def run_robustness_sweep(cfg, params, out: Path, jobs: int) -> None:
    dt = _dt(cfg, SCAN_DT)
    schedule, controls = build_schedule(cfg, params, dt)
    controls = render(cfg, schedule, controls, dt)
    noise = cfg["noise"]
    key = next(k for k in NOISE_AXES if noise[k] is not None)
    which = NOISE_AXES[key]
    sigma = axis_values(noise[key], f"noise.{key}")
    if which == "ryd":
        sigma = khz(sigma)
    spec = NoiseSpec(n_samples=int(noise["n_samples"]), rng_seed=int(cfg["seed"]))
    lindblad = bool(cfg["propagation"]["lindblad"])
    curve = robustness_sweep(params, controls, _target(params, controls), sigma, which, spec, jobs, lindblad)
    curve.to_csv(out / f"robustness_{which}.csv")


def run_optimize(cfg, params, out: Path, jobs: int) -> None:
    s = cfg["schedule"]
    prop = cfg["propagation"]
    if s["scheme"] == "file":
        guess = read_controls_csv(s["path"])
    else:
        schedule, _ = build_schedule(cfg, params, SCAN_DT)
        n = prop["n_steps"]
        if n is None and prop["dt_ns"] is None:
            n = 1000
        guess = schedule.render(n_steps=int(n)) if n is not None else schedule.render(dt=float(prop["dt_ns"]))
    guess = guess.piecewise_constant()
    e = cfg["ensemble"]
    ensemble = EnsembleSpec(int(e["n_members"]), khz(float(e["ryd_range_khz"])), float(e["amp_range"]))
    k = cfg["krotov"]
    config = KrotovConfig(
        lambdas=k["lambdas"],
        update_fraction=float(k["update_fraction"]),
        max_iters=int(k["max_iters"]),
        tol=float(k["tol"]),
        normalized=bool(k["normalized"]),
        monotonic_slack=float(k["monotonic_slack"]),
        compress=bool(k["compress"]),
    )
    target = _target(params, guess)
    write_controls_csv(guess, out / "guess_controls.csv")
    controls, record = optimize(params, guess, target, ensemble, config)
    write_controls_csv(controls, out / "optimized_controls.csv")
    record.to_csv(out / "iterations.csv")
    record.to_json(out / "record.json", timing=False)
    for name, c in (("guess", guess), ("optimized", controls)):
        report = gate_report(logical_evolution_map(params, c), target).to_dict()
        _write_json(out / f"{name}_gate_report.json", report)
    for ch in CHANNELS:
        f, m = spectrum(controls, ch)
        write_spectrum_csv(f, m, out / f"spectrum_{ch}.csv")
    return {"iteration_wall_s": record.wall_time}


RUNNERS = {
    "simulate": run_simulate,
    "speed_limit_scan": run_speed_limit_scan,
    "stirap_amplitude_scan": run_stirap_amplitude_scan,
    "robustness_sweep": run_robustness_sweep,
    "optimize": run_optimize,
}


# ------------------------------------------------------------------ driver


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_plain) + "\n")


def _plain(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def versions() -> dict:
    return {
        "rydgate": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pyyaml": yaml.__version__,
    }


def run(config_path, overrides=(), out=None, jobs: int = 1, seed=None) -> dict:
    """Run one scenario and return its manifest; raises on failure."""
    config_path = Path(config_path)
    raw = copy.deepcopy(load_config(config_path))
    for item in overrides:
        apply_override(raw, item)
    if seed is not None:
        raw["seed"] = seed
    if out is not None:
        raw["output"] = str(out)
    cfg = resolve_config(raw, config_path.parent)
    if not isinstance(jobs, int) or jobs < 1:
        raise ConfigError("jobs must be a positive integer")
    try:
        params = build_params(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid params: {exc}") from exc
    out_dir = Path(cfg["output"])
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        extra = RUNNERS[cfg["kind"]](cfg, params, out_dir, jobs)
    except (PropagationError, KrotovError, FloatingPointError, np.linalg.LinAlgError) as exc:
        raise NumericalError(str(exc)) from exc
    produced = sorted(p for p in out_dir.iterdir() if p.is_file() and p.name != "manifest.json")
    manifest = {
        "config": cfg,
        "seed": cfg["seed"],
        "versions": versions(),
        "artifacts": {p.name: _sha256(p) for p in produced},
        # wall times vary between runs, so they live here rather than in an artifact
        "timing": {"wall_s": time.perf_counter() - t0, **(extra or {})},
    }
    _write_json(out_dir / "manifest.json", manifest)
    return manifest


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message, "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="rydgate", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a scenario file or a manifest")
    p_run.add_argument("config", help="YAML scenario or manifest.json")
    p_run.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. params.u_mhz=40 (repeatable)")
    p_run.add_argument("--out", help="output directory (overrides 'output')")
    p_run.add_argument("--jobs", type=int, default=1, help="worker processes for scans and sampling")
    p_run.add_argument("--seed", type=int, help="random seed (overrides 'seed')")
    p_run.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        run(args.config, args.overrides, args.out, args.jobs, args.seed)
    except (ConfigError, ValueError, TypeError) as exc:
        return _fail("config", str(exc), 2)
    except NumericalError as exc:
        return _fail("numerical", str(exc), 3)
    except OSError as exc:
        return _fail("io", str(exc), 4)
    return 0


if __name__ == "__main__":
    sys.exit(main())
