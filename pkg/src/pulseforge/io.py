"""Persistence: pulse files, result files, scan tables, configs, manifests.

Structured artifacts are JSON; plot series are CSV.  Every run directory
gets a manifest recording the configuration hash, seed and versions so that
any emitted figure data can be regenerated from the repository alone.
"""
from __future__ import annotations

import hashlib
import json
import math
import platform
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .model import DeviceModel, GateTarget, PulseSequence, make_pulse
from .noise import FilterFunctionTable, GateReport, NoiseModel

PULSE_SCHEMA_VERSION = 1


class SchemaError(ValueError):
    """Raised for malformed or unknown-version on-disk artifacts."""


# ---------------------------------------------------------------------------
# Pulse files
# ---------------------------------------------------------------------------

def pulse_to_dict(pulse: PulseSequence) -> dict:
    dev = pulse.device
    return {
        "version": PULSE_SCHEMA_VERSION,
        "name": pulse.name,
        "target": {"axis": list(pulse.target.axis),
                   "angle": pulse.target.angle},
        "t_sample_ns": dev.t_sample,
        "eps_uV": [float(e) for e in pulse.eps],
        "n_dbz": pulse.n_dbz,
        "dbz_rad_per_ns": pulse.dbz,
        "device": {
            "j0_rad_per_ns": dev.j0,
            "eps0_uV": dev.eps0,
            "tau_rise_ns": dev.tau_rise,
            "eps_min_uV": dev.eps_min,
            "eps_max_uV": dev.eps_max,
            "n_sub": dev.n_sub,
        },
    }


_PULSE_KEYS = {"version", "name", "target", "t_sample_ns", "eps_uV", "n_dbz",
               "dbz_rad_per_ns", "device"}
_DEVICE_KEYS = {"j0_rad_per_ns", "eps0_uV", "tau_rise_ns", "eps_min_uV",
                "eps_max_uV", "n_sub"}


def pulse_from_dict(data: dict) -> PulseSequence:
    if not isinstance(data, dict):
        raise SchemaError("pulse file must hold a JSON object")
    if data.get("version") != PULSE_SCHEMA_VERSION:
        raise SchemaError(f"unknown pulse schema version {data.get('version')!r}")
    unknown = set(data) - _PULSE_KEYS
    if unknown:
        raise SchemaError(f"unknown pulse keys: {sorted(unknown)}")
    try:
        dev_raw = data["device"]
        unknown_dev = set(dev_raw) - _DEVICE_KEYS
        if unknown_dev:
            raise SchemaError(f"unknown device keys: {sorted(unknown_dev)}")
        device = DeviceModel(
            j0=float(dev_raw["j0_rad_per_ns"]),
            eps0=float(dev_raw["eps0_uV"]),
            tau_rise=float(dev_raw["tau_rise_ns"]),
            eps_min=float(dev_raw["eps_min_uV"]),
            eps_max=float(dev_raw["eps_max_uV"]),
            t_sample=float(data["t_sample_ns"]),
            n_sub=int(dev_raw["n_sub"]),
        )
        target = GateTarget(axis=tuple(float(a) for a in data["target"]["axis"]),
                            angle=float(data["target"]["angle"]))
        pulse = make_pulse(np.asarray(data["eps_uV"], dtype=float),
                           int(data["n_dbz"]), device, target,
                           name=str(data.get("name", "")))
    except SchemaError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed pulse file: {exc}") from exc
    stored_dbz = float(data["dbz_rad_per_ns"])
    if not math.isclose(stored_dbz, pulse.dbz, rel_tol=1e-9):
        raise SchemaError("stored dbz is inconsistent with the clock condition")
    return pulse


def write_pulse(path, pulse: PulseSequence) -> None:
    Path(path).write_text(json.dumps(pulse_to_dict(pulse), indent=2,
                                     sort_keys=True) + "\n")


def read_pulse(path) -> PulseSequence:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON in {path}: {exc}") from exc
    return pulse_from_dict(data)


# ---------------------------------------------------------------------------
# Reports and result files
# ---------------------------------------------------------------------------

def report_to_dict(report: GateReport) -> dict:
    return {
        "phi_rad": report.phi,
        "axis": [float(a) for a in report.axis],
        "degenerate_axis": bool(report.degenerate),
        "u_realized": {
            "re": np.asarray(report.u_realized).real.tolist(),
            "im": np.asarray(report.u_realized).imag.tolist(),
        },
        "infidelity": {
            "dbz": report.inf_dbz,
            "eps_slow": report.inf_eps_slow,
            "eps_fast": report.inf_eps_fast,
            "systematic": report.inf_systematic,
            "total": report.inf_total,
        },
    }


def optimization_result_to_dict(result) -> dict:
    data = {
        "pulse": pulse_to_dict(result.pulse),
        "report": report_to_dict(result.report),
        "infidelity": report_to_dict(result.report)["infidelity"],
        "cost": result.cost,
        "restarts": result.n_restarts,
        "best_restart": result.best_restart,
        "restart_costs": [float(c) for c in result.restart_costs],
        "cost_history_best": [float(c) for c in result.cost_history],
        "seed": result.seed,
        "sqrt_mode": result.sqrt_mode,
        "wall_time_s": result.wall_time_s,
    }
    return data


def write_json(path, data: dict) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# CSV emitters
# ---------------------------------------------------------------------------

def write_filter_function_csv(path, table: FilterFunctionTable) -> None:
    lines = ["f_hz,F"]
    for f, v in zip(table.frequencies, table.values):
        lines.append(f"{f:.15g},{v:.15g}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_scan_csv(path, rows) -> None:
    lines = ["n_seg,n_dbz,I_total,I_dbz,I_slow,I_fast"]
    for r in rows:
        lines.append(f"{r.n_seg},{r.n_dbz},{r.i_total:.15g},{r.i_dbz:.15g},"
                     f"{r.i_slow:.15g},{r.i_fast:.15g}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_benchmark_csv(path, rows) -> None:
    lines = ["bin_lo,bin_hi,success_rate,median_iters,In_p10,In_p50,In_p90"]
    for r in rows:
        lines.append(f"{r.bin_lo:.15g},{r.bin_hi:.15g},{r.success_rate:.15g},"
                     f"{r.median_iters:.15g},{r.in_p10:.15g},{r.in_p50:.15g},"
                     f"{r.in_p90:.15g}")
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

_CONFIG_BLOCKS = {"device", "noise", "optimizer", "calibration", "seed",
                  "out_dir"}
_DEVICE_CFG_KEYS = {"j0", "eps0", "tau_rise", "eps_min", "eps_max",
                    "t_sample", "n_sub"}
_NOISE_CFG_KEYS = {"sigma_dbz", "sigma_eps", "psd_amp", "psd_exponent",
                   "f_low", "f_knee", "f_high", "n_quad"}
_OPT_CFG_KEYS = {"restarts", "sqrt_mode", "max_iter", "lambda0", "nu",
                 "gtol", "xtol", "fd_step"}
_CAL_CFG_KEYS = {"shots", "w_n", "w_n_prime", "max_iter", "fd_step",
                 "i_sys_threshold", "lambda0", "nu"}


class RunConfig:
    """Validated run configuration: device, noise, optimizer and calibration
    blocks plus seed and output directory.  Unknown keys are rejected."""

    def __init__(self, data: dict | None = None):
        data = dict(data or {})
        unknown = set(data) - _CONFIG_BLOCKS
        if unknown:
            raise SchemaError(f"unknown config keys: {sorted(unknown)}")

        def _block(name, allowed):
            block = data.get(name, {})
            if not isinstance(block, dict):
                raise SchemaError(f"config block {name!r} must be an object")
            bad = set(block) - allowed
            if bad:
                raise SchemaError(f"unknown keys in {name!r}: {sorted(bad)}")
            return block

        from .model import DEFAULT_DEVICE
        from .noise import DEFAULT_NOISE
        try:
            dev_block = _block("device", _DEVICE_CFG_KEYS)
            if "n_sub" in dev_block:
                dev_block["n_sub"] = int(dev_block["n_sub"])
            self.device = DEFAULT_DEVICE.replace(**dev_block)
            noise_block = _block("noise", _NOISE_CFG_KEYS)
            if "n_quad" in noise_block:
                noise_block["n_quad"] = int(noise_block["n_quad"])
            self.noise = DEFAULT_NOISE.replace(**noise_block)
        except ValueError as exc:
            raise SchemaError(f"invalid config: {exc}") from exc
        self.optimizer = _block("optimizer", _OPT_CFG_KEYS)
        self.calibration = _block("calibration", _CAL_CFG_KEYS)
        self.seed = data.get("seed", 0)
        if not isinstance(self.seed, int):
            raise SchemaError("seed must be an integer")
        self.out_dir = data.get("out_dir", ".")
        self.raw = data

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON in {path}: {exc}") from exc
        return cls(data)

    def lm_config(self):
        from .optimize import LmConfig
        keys = {k: v for k, v in self.optimizer.items()
                if k in {"max_iter", "lambda0", "nu", "gtol", "xtol", "fd_step"}}
        if "max_iter" in keys:
            keys["max_iter"] = int(keys["max_iter"])
        return LmConfig(**keys)

    def loop_config(self):
        from .calibrate import LoopConfig
        keys = dict(self.calibration)
        if "shots" in keys:
            keys["shots"] = int(keys["shots"])
        if "max_iter" in keys:
            keys["max_iter"] = int(keys["max_iter"])
        return LoopConfig(**keys)


def config_hash(config: RunConfig) -> str:
    return hashlib.sha256(
        json.dumps(config.raw, sort_keys=True).encode()).hexdigest()


def write_manifest(path, config: RunConfig, seed: int, command: str,
                   argv, wall_time_s: float) -> None:
    import pulseforge
    manifest = {
        "command": command,
        "argv": list(argv),
        "config_sha256": config_hash(config),
        "seed": seed,
        "versions": {
            "pulseforge": pulseforge.__version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "wall_time_s": wall_time_s,
    }
    write_json(path, manifest)
