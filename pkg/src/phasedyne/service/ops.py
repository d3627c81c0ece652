"""Service operations: the single code path behind both the HTTP endpoints
and the CLI.  Requests come in as pydantic models, get translated to core
objects, and results come back as response models."""

from __future__ import annotations

import math

from .. import __version__, analytics, checks
from ..config import build_manifest, build_simulate_setup, build_sweep_spec, resolve_config
from ..harness import run_ensemble, estimate_stationary_mse, run_sweep
from ..io import sweep_summary
from .models import (
    CheckResultModel,
    HealthResponse,
    MseResultModel,
    PowerLawFitModel,
    SimulateRequest,
    SimulateResponse,
    SweepRequest,
    SweepResponse,
    SweepRowModel,
    TableEntryModel,
    TableResponse,
    TrajectorySamples,
    ValidateRequest,
    ValidateResponse,
)


def health_op() -> HealthResponse:
    return HealthResponse(name="phasedyne", version=__version__)


def _resolved_for(request_values: dict, command: str):
    """Run request values through the same schema the config file uses."""
    resolved, provenance = resolve_config(flag_values=request_values)
    return resolved, build_manifest(command, resolved, provenance)


def simulate_op(req: SimulateRequest) -> SimulateResponse:
    values = req.model_dump(exclude_none=True)
    values.setdefault("experiment", "simulate")
    record_traj = values.get("record_traj", 8)
    resolved, manifest = _resolved_for(values, "simulate")
    config, controller, noise = build_simulate_setup(resolved)
    records = run_ensemble(config, controller, noise, record_traj=record_traj)
    result = estimate_stationary_mse(records)
    samples = [
        TrajectorySamples(
            trajectory=r.trajectory, t=r.times.tolist(),
            true_phase=r.phi.tolist(), lo_phase=r.lo_phase.tolist(),
            estimate=r.estimate.tolist(), error=r.error.tolist(),
            slip_times=r.slip_times.tolist())
        for r in records[:record_traj] if r.times.size
    ]
    return SimulateResponse(
        manifest_hash=manifest.hash,
        result=MseResultModel(mse=result.mse, stderr=result.stderr,
                              n_samples=result.n_samples,
                              slip_count=result.slip_count,
                              config=result.config,
                              wall_time_s=result.wall_time_s),
        samples=samples)


def sweep_op(req: SweepRequest) -> SweepResponse:
    values = req.model_dump(exclude_none=True)
    resolved, manifest = _resolved_for(values, "sweep")
    spec = build_sweep_spec(resolved)
    result = run_sweep(spec)
    rows = [
        SweepRowModel(
            params=row.params, seed=row.seed,
            mse=None if math.isnan(row.mse) else row.mse,
            stderr=None if math.isnan(row.stderr) else row.stderr,
            n_samples=row.n_samples, slip_count=row.slip_count,
            analytic=None if math.isnan(row.analytic) else row.analytic,
            ratio=None if math.isnan(row.ratio) else row.ratio,
            error=row.error)
        for row in result.rows
    ]
    fit = None
    if result.fit is not None:
        fit = PowerLawFitModel(exponent=result.fit.exponent,
                               constant=result.fit.constant,
                               residual=result.fit.residual)
    return SweepResponse(
        manifest_hash=manifest.hash, experiment=spec.kind.value, rows=rows,
        fit=fit, extras=result.extras,
        summary=sweep_summary(result, resolved["seed"], __version__))


def table_op() -> TableResponse:
    entries = []
    for mode in analytics.Mode:
        for det in analytics.Detection:
            for src in analytics.Source:
                for adp in analytics.Adaptivity:
                    e = analytics.sql_table(mode, det, src, adp)
                    entries.append(TableEntryModel(
                        mode=e.mode.value, detection=e.detection.value,
                        source=e.source.value, adaptivity=e.adaptivity.value,
                        known=e.known, variable=e.variable, constant=e.constant,
                        exponent=str(e.exponent) if e.exponent is not None else None,
                        log_factor=e.log_factor, conjectured=e.conjectured,
                        beats_sql=e.beats_sql, law=e.law_text()))
    return TableResponse(entries=entries, rows=analytics.scaling_table_rows())


def table_csv_op() -> str:
    return analytics.scaling_table_csv()


def validate_op(req: ValidateRequest) -> ValidateResponse:
    seed = req.seed if req.seed is not None else checks.DEFAULT_VALIDATE_SEED
    results = checks.run_validation(req.level, seed=seed, n_traj=req.n_traj)
    return ValidateResponse(
        level=req.level, seed=seed,
        all_passed=all(c.passed for c in results),
        checks=[CheckResultModel.clean(c.name, c.passed, c.simulated, c.reference,
                                       c.tolerance, c.stderr, c.detail)
                for c in results])
