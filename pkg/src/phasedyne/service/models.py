"""Pydantic request/response models for the HTTP service and the CLI client."""

from __future__ import annotations

import math
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field


class SimulateRequest(BaseModel):
    """One simulation point; fields mirror the configuration schema."""

    model_config = ConfigDict(extra="forbid")

    N: float = Field(400.0, gt=0, description="photons per coherence time")
    kappa: float = Field(1.0, gt=0)
    controller: Literal["fixed", "kalman", "heterodyne"] = "fixed"
    chi_ratio: float = Field(1.0, gt=0)
    sigma2_init: float | None = Field(None, gt=0)
    noise: Literal["coherent", "squeezed"] = "coherent"
    S: float | None = Field(None, gt=0, le=1)
    S_a: float | None = Field(None, ge=1)
    delta_factor: float = Field(50.0, ge=10)
    demod_rate: float | None = Field(None, gt=0)
    dt: float | None = Field(None, gt=0)
    t_burn: float | None = Field(None, gt=0)
    t_meas: float | None = Field(None, gt=0)
    guard_fraction: float = Field(0.01, gt=0, le=0.02)
    t_burn_factor: float = Field(20.0, gt=0)
    t_meas_factor: float = Field(200.0, gt=0)
    seed: int = Field(42, ge=0, lt=2**64)
    n_traj: int = Field(200, ge=1)
    record_traj: int = Field(8, ge=0)

    def resolved_config(self) -> dict:
        return self.model_dump()


class MseResultModel(BaseModel):
    mse: float
    stderr: float
    n_samples: int
    slip_count: int
    config: dict
    wall_time_s: float


class TrajectorySamples(BaseModel):
    trajectory: int
    t: list[float]
    true_phase: list[float]
    lo_phase: list[float]
    estimate: list[float]
    error: list[float]
    slip_times: list[float]


class SimulateResponse(BaseModel):
    manifest_hash: str
    result: MseResultModel
    samples: list[TrajectorySamples]


class SweepRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    experiment: Literal["gain", "n", "squeeze", "het-vs-adaptive"]
    grid: list[float] | None = None
    N: float = Field(400.0, gt=0)
    kappa: float = Field(1.0, gt=0)
    squeeze_rule: Literal["none", "fixed", "opt-scaling"] = "none"
    S: float | None = Field(None, gt=0, le=1)
    S_a: float | None = Field(None, ge=1)
    chi_ratio: float = Field(1.0, gt=0)
    guard_fraction: float = Field(0.01, gt=0, le=0.02)
    t_burn_factor: float = Field(20.0, gt=0)
    t_meas_factor: float = Field(200.0, gt=0)
    seed: int = Field(42, ge=0, lt=2**64)
    n_traj: int = Field(200, ge=1)


class SweepRowModel(BaseModel):
    params: dict
    seed: int
    mse: float | None = None
    stderr: float | None = None
    n_samples: int = 0
    slip_count: int = 0
    analytic: float | None = None
    ratio: float | None = None
    error: str | None = None


class PowerLawFitModel(BaseModel):
    exponent: float
    constant: float
    residual: float


class SweepResponse(BaseModel):
    manifest_hash: str
    experiment: str
    rows: list[SweepRowModel]
    fit: PowerLawFitModel | None = None
    extras: dict = {}
    summary: dict


class TableEntryModel(BaseModel):
    mode: str
    detection: str
    source: str
    adaptivity: str
    known: bool
    variable: str
    constant: float | None
    exponent: str | None
    log_factor: bool
    conjectured: bool
    beats_sql: bool
    law: str


class TableResponse(BaseModel):
    entries: list[TableEntryModel]
    rows: list[list[str]]


class ValidateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    level: Literal["quick", "full"] = "quick"
    seed: int | None = Field(None, ge=0, lt=2**64)
    n_traj: int | None = Field(None, ge=2)


class CheckResultModel(BaseModel):
    name: str
    passed: bool
    simulated: float | None
    reference: float | None
    tolerance: float
    stderr: float
    detail: str

    @classmethod
    def clean(cls, name: str, passed: bool, simulated: float, reference: float,
              tolerance: float, stderr: float, detail: str) -> "CheckResultModel":
        def f(x):
            return None if (x is None or math.isnan(x)) else x
        return cls(name=name, passed=passed, simulated=f(simulated),
                   reference=f(reference), tolerance=tolerance, stderr=stderr,
                   detail=detail)


class ValidateResponse(BaseModel):
    level: str
    seed: int
    all_passed: bool
    checks: list[CheckResultModel]


class HealthResponse(BaseModel):
    name: str
    version: str
