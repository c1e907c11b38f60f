"""FastAPI application wrapping the service handlers."""

from __future__ import annotations

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import FlowvolError
from . import api
from . import schemas as sc


def create_app() -> FastAPI:
    app = FastAPI(
        title="flowvol",
        description=(
            "Multi-agent Hawkes fitting and volatility attribution for "
            "labeled level-I order flow"
        ),
        version=__version__,
    )

    @app.exception_handler(FlowvolError)
    async def _domain_error(request, exc: FlowvolError):
        return JSONResponse(
            status_code=400,
            content={"error": type(exc).__name__, "detail": str(exc)},
        )

    @app.get("/health", response_model=sc.HealthResponse)
    def health():
        return sc.HealthResponse(status="ok", version=__version__)

    @app.post("/simulate", response_model=sc.SimulateResponse)
    def simulate(req: sc.SimulateRequest):
        return api.simulate_handler(req)

    @app.post("/fit", response_model=sc.FitResponse)
    def fit(req: sc.FitRequest):
        return api.fit_handler(req)

    @app.post("/attribute", response_model=sc.AttributeResponse)
    def attribute(req: sc.AttributeRequest):
        return api.attribute_handler(req)

    @app.post("/control", response_model=sc.ControlResponse)
    def control(req: sc.ControlRequest):
        return api.control_handler(req)

    @app.post("/features", response_model=sc.FeaturesResponse)
    def features(req: sc.FeaturesRequest):
        return api.features_handler(req)

    return app


app = create_app()
