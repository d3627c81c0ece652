"""CSV and JSON serialization for results, with run-manifest stamping.

Every output file starts with (or embeds) the hash of the manifest that
produced it, so artifacts from different runs cannot be compared by
accident.  Floating-point values are written with 17 significant digits,
'.' decimal, no grouping, making reruns byte-identical and values
round-trip exact.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .harness import MseResult, SweepResult, TrajectoryRecord

MANIFEST_PREFIX = "# manifest="


def format_value(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, (float, np.floating)):
        if math.isnan(v):
            return "nan"
        return f"{float(v):.17g}"
    if v is None:
        return ""
    return str(v)


def render_csv(header: list[str], rows: list[list], manifest_hash: str | None = None) -> str:
    lines = []
    if manifest_hash:
        lines.append(MANIFEST_PREFIX + manifest_hash)
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(format_value(v) for v in row))
    return "\n".join(lines) + "\n"


def write_csv(path, header: list[str], rows: list[list],
              manifest_hash: str | None = None) -> Path:
    path = Path(path)
    path.write_text(render_csv(header, rows, manifest_hash))
    return path


def read_csv(path) -> tuple[str | None, list[str], list[list[str]]]:
    """Read one of our CSVs back: (manifest_hash, header, string rows)."""
    lines = Path(path).read_text().splitlines()
    manifest_hash = None
    if lines and lines[0].startswith(MANIFEST_PREFIX):
        manifest_hash = lines[0][len(MANIFEST_PREFIX):]
        lines = lines[1:]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise ConfigError(f"{path}: empty table")
    header = lines[0].split(",")
    return manifest_hash, header, [ln.split(",") for ln in lines[1:]]


def embedded_manifest(path) -> str | None:
    """Manifest hash embedded in a CSV or JSON artifact."""
    path = Path(path)
    text = path.read_text()
    if text.startswith(MANIFEST_PREFIX):
        return text[len(MANIFEST_PREFIX):].splitlines()[0]
    if text.lstrip().startswith("{"):
        return json.loads(text).get("manifest")
    return None


def check_same_manifest(*paths) -> str:
    """Refuse to relate artifacts stamped with different manifest hashes."""
    hashes = {p: embedded_manifest(p) for p in paths}
    distinct = {h for h in hashes.values() if h is not None}
    if len(distinct) > 1:
        raise ConfigError(
            "artifacts come from different runs: "
            + ", ".join(f"{Path(p).name}={h}" for p, h in hashes.items()))
    if not distinct:
        raise ConfigError("no manifest hash embedded in any of the artifacts")
    return distinct.pop()


def write_json(path, payload: dict, manifest_hash: str | None = None) -> Path:
    path = Path(path)
    doc = dict(payload)
    if manifest_hash:
        doc = {"manifest": manifest_hash, **doc}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if hasattr(obj, "value"):
        return obj.value
    raise TypeError(f"cannot serialize {type(obj)}")


# ---------------------------------------------------------------------------
# Table builders
# ---------------------------------------------------------------------------

SWEEP_FIXED_COLUMNS = ["mse", "stderr", "n_samples", "slip_count",
                       "analytic_prediction", "ratio", "seed", "error"]


def sweep_table(result: SweepResult) -> tuple[list[str], list[list]]:
    """Result table: grid parameter columns followed by the fixed columns."""
    param_keys: list[str] = []
    for row in result.rows:
        for key in row.params:
            if key not in param_keys:
                param_keys.append(key)
    header = param_keys + SWEEP_FIXED_COLUMNS
    rows = []
    for row in result.rows:
        cells = [row.params.get(k) for k in param_keys]
        cells += [row.mse, row.stderr, row.n_samples, row.slip_count,
                  row.analytic, row.ratio, row.seed, row.error]
        rows.append(cells)
    return header, rows


def sweep_summary(result: SweepResult, seed: int, version: str) -> dict:
    """JSON summary: config echo, fits, seeds, versions."""
    summary = {
        "experiment": result.spec.kind.value,
        "grid": list(result.spec.grid),
        "kappa": result.spec.kappa,
        "n_photons": result.spec.n_photons,
        "n_traj": result.spec.n_traj,
        "squeeze_rule": result.spec.squeeze_rule.value,
        "seed": seed,
        "point_seeds": [r.seed for r in result.rows],
        "version": version,
        "n_failures": len(result.failures),
    }
    if result.fit is not None:
        summary["fit"] = {"exponent": result.fit.exponent,
                          "constant": result.fit.constant,
                          "residual": result.fit.residual}
    if result.extras:
        summary["extras"] = result.extras
    return summary


def records_table(records: list[TrajectoryRecord]) -> tuple[list[str], list[list]]:
    """Decimated trajectory samples, one row per (trajectory, time)."""
    header = ["trajectory", "t", "true_phase", "lo_phase", "estimate", "error"]
    rows = []
    for r in records:
        for j in range(r.times.size):
            rows.append([r.trajectory, r.times[j], r.phi[j], r.lo_phase[j],
                         r.estimate[j], r.error[j]])
    return header, rows


def mse_result_payload(result: MseResult) -> dict:
    return {
        "mse": result.mse,
        "stderr": result.stderr,
        "n_samples": result.n_samples,
        "slip_count": result.slip_count,
        "config": result.config,
        "wall_time_s": result.wall_time_s,
    }
