"""Pydantic request/response models for the HTTP service.

Event streams travel as parallel columns to keep payloads compact; model
specifications mirror the truth.json layout written by the CLI.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator

from ..estimate import FIT_SCHEMA_VERSION
from ..events import EventStream
from ..model import (
    BasisDictionary,
    HawkesModel,
    KernelMatrix,
    PiecewiseBaseline,
)


class EventsPayload(BaseModel):
    t: list[float]
    agent: list[str]
    kind: list[str]
    delta: list[float]
    session: tuple[float, float]
    day: str = ""

    @model_validator(mode="after")
    def _check_lengths(self):
        n = len(self.t)
        if not (len(self.agent) == len(self.kind) == len(self.delta) == n):
            raise ValueError("event columns must have equal length")
        return self

    def to_stream(self) -> EventStream:
        stream = EventStream(
            t=np.asarray(self.t, dtype=float),
            agent=np.asarray(self.agent, dtype=object),
            kind=np.asarray(self.kind, dtype=object),
            delta=np.asarray(self.delta, dtype=float),
            session=self.session,
            day=self.day,
        )
        stream.validate()
        return stream

    @classmethod
    def from_stream(cls, stream: EventStream) -> "EventsPayload":
        return cls(
            t=stream.t.tolist(),
            agent=[str(a) for a in stream.agent],
            kind=[str(k) for k in stream.kind],
            delta=stream.delta.tolist(),
            session=stream.session,
            day=stream.day,
        )


class ModelPayload(BaseModel):
    components: list[tuple[str, str]]
    decays: list[float]
    coeffs: list  # dim x dim x L nested lists
    baseline_edges: list[float]
    baseline_values: list  # dim x K nested lists
    jumps: list[float]

    def to_model(self) -> HawkesModel:
        basis = BasisDictionary(np.asarray(self.decays, dtype=float))
        return HawkesModel(
            components=tuple((a, k) for a, k in self.components),
            kernels=KernelMatrix(np.asarray(self.coeffs, dtype=float), basis),
            baseline=PiecewiseBaseline(
                np.asarray(self.baseline_edges, dtype=float),
                np.asarray(self.baseline_values, dtype=float),
            ),
            jumps=np.asarray(self.jumps, dtype=float),
        )

    @classmethod
    def from_model(cls, model: HawkesModel) -> "ModelPayload":
        return cls(
            components=[list(c) for c in model.components],
            decays=model.kernels.basis.decays.tolist(),
            coeffs=model.kernels.coeffs.tolist(),
            baseline_edges=model.baseline.edges.tolist(),
            baseline_values=model.baseline.values.tolist(),
            jumps=model.jumps.tolist(),
        )


class FitParams(BaseModel):
    decays: list[float]
    baseline_bins: int = 1
    min_events: int = 1000
    ridge: Optional[float] = None


class SimulateRequest(BaseModel):
    model_spec: ModelPayload
    horizon: float = Field(gt=0)
    seed: int = Field(ge=0)
    algorithm: str = "thinning"
    max_events: int = 10_000_000

    @model_validator(mode="after")
    def _check_algorithm(self):
        if self.algorithm not in ("thinning", "cluster"):
            raise ValueError("algorithm must be 'thinning' or 'cluster'")
        return self


class TruthPayload(BaseModel):
    model_spec: ModelPayload
    phi: list
    lam: list[float]
    rho_spec: float
    sigma2: float


class SimulateResponse(BaseModel):
    events: EventsPayload
    truth: TruthPayload


class FitRequest(BaseModel):
    events: EventsPayload
    params: FitParams
    agents: Optional[list[str]] = None


class AgentFitPayload(BaseModel):
    agent: str
    day: str = ""
    decays: list[float]
    edges: list[float]
    baseline: list
    self_coeffs: list
    market_coeffs: list
    delta_hat: list[float]
    contrast: list[float]
    flags: dict = Field(default_factory=dict)
    n_events: int = 0
    shape: dict = Field(default_factory=dict)


class FitsDocument(BaseModel):
    schema_version: int = FIT_SCHEMA_VERSION
    day: str = ""
    session: tuple[float, float]
    agents: list[AgentFitPayload]
    panel: list[str]
    lam: list[float] = Field(alias="lambda")
    skipped: list[str] = Field(default_factory=list)

    model_config = {"populate_by_name": True}


class FitResponse(BaseModel):
    fits: FitsDocument


class AttributeParams(BaseModel):
    window_days: int = 20
    half_tick: Optional[float] = None
    open_price: Optional[float] = None


class AttributeRequest(BaseModel):
    days: list[FitsDocument]
    params: AttributeParams = Field(default_factory=AttributeParams)


class ComponentRow(BaseModel):
    agent: str
    type: str
    lam: float = Field(alias="lambda")
    mu: float
    xi: Optional[float]
    u: Optional[float]

    model_config = {"populate_by_name": True}


class AgentRow(BaseModel):
    agent: str
    rho: Optional[float]
    f: Optional[float]
    xi_merged: dict


class DayReport(BaseModel):
    day: str
    session: tuple[float, float]
    sigma2: Optional[float]
    sigma2_poisson: float
    rho_spec: float
    stable: bool
    annualized: Optional[float] = None
    components: list[ComponentRow]
    agents: list[AgentRow]
    notes: list[str] = Field(default_factory=list)


class AttributeResponse(BaseModel):
    reports: list[DayReport]
    ratio_days: list[str]
    sigma2_mu_ratio: list[Optional[float]]


class ControlRequest(BaseModel):
    events: EventsPayload
    params: FitParams
    replicates: int = Field(default=10, ge=1)
    seed: int = Field(default=0, ge=0)
    agents: Optional[list[str]] = None


class ControlAgentRow(BaseModel):
    agent: str
    rho_actual: Optional[float]
    rho_control: Optional[float]
    rho_residual: Optional[float]
    xi_actual: dict
    xi_control: dict
    xi_residual: dict


class ControlResponse(BaseModel):
    day: str
    replicates: int
    agents: list[ControlAgentRow]
    notes: list[str] = Field(default_factory=list)


class RawRecordPayload(BaseModel):
    ts_ns: int
    agent: str
    action: str
    side: str
    price: float
    size: float
    order_id: str = ""
    bb_pre: float
    ba_pre: float
    bb_post: float
    ba_post: float
    aggressor: bool = False


class FeaturesRequest(BaseModel):
    records: list[RawRecordPayload]
    session: tuple[float, float]
    day: str = ""
    presence: dict[str, float] = Field(default_factory=dict)


class FeatureRow(BaseModel):
    agent_id: str
    day: str
    eod_position_ratio: Optional[float]
    order_lifetime_median_s: Optional[float]
    inter_event_time_median_s: Optional[float]
    aggressive_volume_fraction: Optional[float]
    presence_l1: Optional[float]
    counts: dict[str, int]
    flags: list[str] = Field(default_factory=list)


class FeaturesResponse(BaseModel):
    day: str
    features: list[FeatureRow]
    dropped_deep_book: int
    events: EventsPayload


class HealthResponse(BaseModel):
    status: str
    version: str
