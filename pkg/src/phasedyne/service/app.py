"""FastAPI application exposing the simulator as a small compute service."""

from __future__ import annotations

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import JSONResponse, PlainTextResponse

from ..errors import ConfigError, StiffnessError
from . import ops
from .models import (
    HealthResponse,
    SimulateRequest,
    SimulateResponse,
    SweepRequest,
    SweepResponse,
    ValidateRequest,
    ValidateResponse,
)


def create_app() -> FastAPI:
    app = FastAPI(title="phasedyne", description=__doc__)

    @app.exception_handler(ConfigError)
    async def _config_error(request, exc):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.get("/health", response_model=HealthResponse)
    def health():
        return ops.health_op()

    @app.post("/simulate", response_model=SimulateResponse)
    def simulate(req: SimulateRequest):
        try:
            return ops.simulate_op(req)
        except (ConfigError, StiffnessError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    @app.post("/sweep", response_model=SweepResponse)
    def sweep(req: SweepRequest):
        try:
            return ops.sweep_op(req)
        except ConfigError as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    @app.get("/table")
    def table(format: str = Query("json", pattern="^(json|csv)$")):
        if format == "csv":
            return PlainTextResponse(ops.table_csv_op(), media_type="text/csv")
        return ops.table_op()

    @app.post("/validate", response_model=ValidateResponse)
    def validate(req: ValidateRequest):
        try:
            return ops.validate_op(req)
        except ConfigError as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    return app


app = create_app()
