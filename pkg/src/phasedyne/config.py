"""Key-value run configuration, validation, and the reproducibility manifest.

Configuration comes from a single plain-text file of `key = value` lines
('#' comments allowed) plus command-line overrides; flags win and every
value's provenance (flag/file/default) is recorded in the manifest.  A
previously written manifest.json is itself accepted as a config file, so
any run can be reproduced bit-exactly from its manifest.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable

from . import __version__
from .control import ControllerSpec, optimal_gain
from .detection import NoiseModel
from .errors import ConfigError
from .harness import (
    DEFAULT_BURN_FACTOR,
    DEFAULT_GUARD_FRACTION,
    DEFAULT_MEAS_FACTOR,
    SimConfig,
    SqueezeRule,
    SweepKind,
    SweepSpec,
    make_run_setup,
)

EXPERIMENTS = ("simulate", "gain", "n", "squeeze", "het-vs-adaptive")
CONTROLLERS = ("fixed", "kalman", "heterodyne")
NOISES = ("coherent", "squeezed")
SQUEEZE_RULES = tuple(r.value for r in SqueezeRule)

DEFAULT_GRIDS = {
    "gain": (0.25, 0.5, 1.0, 2.0, 4.0),
    "n": (100.0, 400.0, 1600.0),
    "squeeze": (0.1, 0.2, 0.4, 0.7, 1.0),
    "het-vs-adaptive": (100.0, 400.0, 1600.0),
}


def _positive(x) -> bool:
    return x > 0


def _parse_grid(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from None
    if not values:
        raise ConfigError("grid: must contain at least one value")
    return values


@dataclass(frozen=True)
class _Key:
    name: str
    parse: Callable[[str], Any]
    default: Any = None
    constraint: Callable[[Any], bool] | None = None
    describe: str = ""


def _choice(options):
    def parse(text: str):
        value = str(text).strip()
        if value not in options:
            raise ConfigError(f"must be one of {', '.join(options)}")
        return value
    return parse


def _parse_seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise ConfigError("must fit in an unsigned 64-bit integer")
    return value


SCHEMA: dict[str, _Key] = {k.name: k for k in [
    _Key("experiment", _choice(EXPERIMENTS), "simulate"),
    _Key("N", float, 400.0, _positive, "N > 0"),
    _Key("kappa", float, 1.0, _positive, "kappa > 0"),
    _Key("controller", _choice(CONTROLLERS), "fixed"),
    _Key("chi_ratio", float, 1.0, _positive, "chi_ratio > 0"),
    _Key("sigma2_init", float, None, _positive, "sigma2_init > 0"),
    _Key("noise", _choice(NOISES), "coherent"),
    _Key("S", float, None, lambda v: 0 < v <= 1, "0 < S <= 1"),
    _Key("S_a", float, None, lambda v: v >= 1, "S_a >= 1"),
    _Key("delta_factor", float, 50.0, lambda v: v >= 10, "delta_factor >= 10"),
    _Key("demod_rate", float, None, _positive, "demod_rate > 0"),
    _Key("dt", float, None, _positive, "dt > 0"),
    _Key("t_burn", float, None, _positive, "t_burn > 0"),
    _Key("t_meas", float, None, _positive, "t_meas > 0"),
    _Key("guard_fraction", float, DEFAULT_GUARD_FRACTION,
         lambda v: 0 < v <= 0.02, "0 < guard_fraction <= 0.02"),
    _Key("t_burn_factor", float, DEFAULT_BURN_FACTOR, _positive, "t_burn_factor > 0"),
    _Key("t_meas_factor", float, DEFAULT_MEAS_FACTOR, _positive, "t_meas_factor > 0"),
    _Key("seed", _parse_seed, 42),
    _Key("n_traj", int, 200, lambda v: v >= 1, "n_traj >= 1"),
    _Key("record_traj", int, 8, lambda v: v >= 0, "record_traj >= 0"),
    _Key("grid", _parse_grid, None),
    _Key("squeeze_rule", _choice(SQUEEZE_RULES), "none"),
    _Key("slip_threshold", float, math.pi / 2,
         lambda v: 0 < v <= math.pi, "0 < slip_threshold <= pi"),
]}


def parse_config_text(text: str) -> dict[str, str]:
    """Parse `key = value` lines (or a manifest JSON) into raw strings."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        doc = json.loads(text)
        resolved = doc.get("config", doc)
        return {k: str(v) for k, v in resolved.items() if v is not None}
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def resolve_config(file_values: dict[str, str] | None = None,
                   flag_values: dict[str, Any] | None = None
                   ) -> tuple[dict[str, Any], dict[str, str]]:
    """Merge file values and flag overrides against the schema.

    Returns (resolved, provenance); unknown keys are hard errors, and every
    constraint violation names the key, the value, and the constraint.
    """
    file_values = file_values or {}
    flag_values = {k: v for k, v in (flag_values or {}).items() if v is not None}
    for key in list(file_values) + list(flag_values):
        if key not in SCHEMA:
            raise ConfigError(f"unknown configuration key {key!r}")
    resolved: dict[str, Any] = {}
    provenance: dict[str, str] = {}
    for name, spec in SCHEMA.items():
        if name in flag_values:
            raw, source = flag_values[name], "flag"
        elif name in file_values:
            raw, source = file_values[name], "file"
        else:
            resolved[name], provenance[name] = spec.default, "default"
            continue
        try:
            value = spec.parse(raw) if isinstance(raw, str) else raw
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"{name} = {raw!r}: {exc}") from None
        if spec.constraint is not None and value is not None and not spec.constraint(value):
            raise ConfigError(
                f"{name} = {raw!r} violates the constraint {spec.describe}")
        resolved[name], provenance[name] = value, source
    if resolved["grid"] is None and resolved["experiment"] in DEFAULT_GRIDS:
        resolved["grid"] = DEFAULT_GRIDS[resolved["experiment"]]
    if resolved["experiment"] == "squeeze" and any(g > 1 for g in resolved["grid"] or ()):
        raise ConfigError("grid: squeeze sweep values must be in (0, 1]")
    return resolved, provenance


@dataclass
class RunManifest:
    """Everything needed to reproduce a run bit-exactly."""

    command: str
    config: dict[str, Any]
    provenance: dict[str, str]
    seed: int
    version: str = __version__
    timestamp: float = field(default_factory=time.time)
    out_paths: list[str] = field(default_factory=list)
    hash_override: str | None = None

    @property
    def hash(self) -> str:
        """Digest over the reproducibility-relevant fields only (no timestamp).

        A service response may supply the authoritative hash of the effective
        request; hash_override carries it so the files the client writes are
        stamped identically.
        """
        if self.hash_override:
            return self.hash_override
        doc = {"command": self.command, "config": self.config,
               "seed": self.seed, "version": self.version}
        blob = json.dumps(doc, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def payload(self) -> dict:
        return {
            "command": self.command,
            "config": self.config,
            "provenance": self.provenance,
            "seed": self.seed,
            "version": self.version,
            "timestamp": self.timestamp,
            "out_paths": self.out_paths,
            "hash": self.hash,
        }


def build_manifest(command: str, resolved: dict[str, Any],
                   provenance: dict[str, str],
                   hash_override: str | None = None) -> RunManifest:
    return RunManifest(command=command, config=dict(resolved),
                       provenance=dict(provenance),
                       seed=int(resolved.get("seed", 0)),
                       hash_override=hash_override)


# ---------------------------------------------------------------------------
# Turning a resolved config into harness objects
# ---------------------------------------------------------------------------


def build_noise(resolved: dict[str, Any]) -> NoiseModel:
    if resolved["noise"] == "coherent":
        if resolved.get("S") is not None or resolved.get("S_a") is not None:
            raise ConfigError("S/S_a are only meaningful with noise = squeezed")
        return NoiseModel.coherent()
    if resolved.get("S") is None:
        raise ConfigError("noise = squeezed requires S")
    return NoiseModel.squeezed(resolved["S"], resolved.get("S_a"))


def build_controller(resolved: dict[str, Any]) -> ControllerSpec:
    kind = resolved["controller"]
    if kind == "heterodyne":
        return ControllerSpec.heterodyne(detuning_factor=resolved["delta_factor"],
                                         demod_rate=resolved.get("demod_rate"))
    if kind == "kalman":
        return ControllerSpec.kalman_gain(sigma2_init=resolved.get("sigma2_init"))
    alpha = math.sqrt(resolved["N"] * resolved["kappa"])
    noise = build_noise(resolved)
    chi = resolved["chi_ratio"] * optimal_gain(resolved["kappa"], alpha)
    if noise.kind.value == "squeezed":
        chi = chi / math.sqrt(noise.S)
    return ControllerSpec.fixed_gain(chi)


def build_simulate_setup(resolved: dict[str, Any]
                         ) -> tuple[SimConfig, ControllerSpec, NoiseModel]:
    """SimConfig + controller + noise for a single-point simulation run."""
    controller = build_controller(resolved)
    noise = build_noise(resolved)
    config = make_run_setup(
        resolved["N"], controller, kappa=resolved["kappa"], seed=resolved["seed"],
        n_traj=resolved["n_traj"], guard_fraction=resolved["guard_fraction"],
        t_burn_factor=resolved["t_burn_factor"], t_meas_factor=resolved["t_meas_factor"])
    overrides = {k: resolved[k] for k in ("dt", "t_burn", "t_meas")
                 if resolved.get(k) is not None}
    if overrides:
        config = config.replace(**overrides)
    return config, controller, noise


def build_sweep_spec(resolved: dict[str, Any]) -> SweepSpec:
    experiment = resolved["experiment"]
    if experiment == "simulate":
        raise ConfigError("experiment = simulate is not a sweep; use the simulate command")
    squeeze_rule = SqueezeRule(resolved["squeeze_rule"])
    if resolved["noise"] == "squeezed" and squeeze_rule == SqueezeRule.NONE:
        squeeze_rule = SqueezeRule.FIXED
    return SweepSpec(
        kind=SweepKind(experiment), grid=tuple(resolved["grid"]),
        n_photons=resolved["N"], kappa=resolved["kappa"], seed=resolved["seed"],
        n_traj=resolved["n_traj"], squeeze_rule=squeeze_rule,
        S=resolved.get("S"), S_a=resolved.get("S_a"),
        chi_ratio=resolved["chi_ratio"], guard_fraction=resolved["guard_fraction"],
        t_burn_factor=resolved["t_burn_factor"], t_meas_factor=resolved["t_meas_factor"])
