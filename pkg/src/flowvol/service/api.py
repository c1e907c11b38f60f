"""Service handlers: plain functions over the request/response models.

The FastAPI app and the CLI both call these; the CLI default transport is
in-process, so every numerical path stays identical with or without HTTP.
"""

from __future__ import annotations

import numpy as np

from .. import attribute as attr
from .. import estimate as est
from ..errors import DimensionMismatch, FlowvolError, NoEligibleAgents, Unstable
from ..events import EventStream
from ..model import (
    BasisDictionary,
    integrate_kernels,
    spectral_radius,
    summarize,
)
from ..pipeline import RawOrderRecord, classify, compute_features
from ..simulate import simulate_cluster, simulate_thinning
from . import schemas as sc


def simulate_handler(req: sc.SimulateRequest) -> sc.SimulateResponse:
    model = req.model_spec.to_model()
    phi = integrate_kernels(model.kernels)
    rho = spectral_radius(phi)
    if rho >= 1.0:
        raise Unstable(f"model spec is supercritical: spectral radius {rho:.4f}")
    summary = summarize(model)
    sampler = simulate_thinning if req.algorithm == "thinning" else simulate_cluster
    stream = sampler(model, req.horizon, req.seed, max_events=req.max_events)
    truth = sc.TruthPayload(
        model_spec=req.model_spec,
        phi=phi.tolist(),
        lam=summary.lam.tolist(),
        rho_spec=rho,
        sigma2=attr.sigma2_asymptotic(summary, model.jumps),
    )
    return sc.SimulateResponse(events=sc.EventsPayload.from_stream(stream), truth=truth)


def _eligible_agents(stream: EventStream, candidates, min_events):
    per_agent = {}
    for a in stream.agent:
        per_agent[a] = per_agent.get(a, 0) + 1
    if candidates is None:
        candidates = sorted(per_agent)
    eligible = [a for a in candidates if per_agent.get(a, 0) >= min_events]
    return eligible, per_agent


def fit_day(stream: EventStream, params: sc.FitParams, candidates=None):
    """Fit every eligible agent plus the pooled remainder on one day.

    Without explicit candidates, the panel is the day's own eligible agents
    and everyone else folds into the pooled remainder. With candidates (a
    fixed cross-day panel), panel members keep their identity even below the
    threshold: they are skipped, end up as zero blocks at assembly, and only
    non-panel agents pool into the remainder, so every day shares one panel.
    """
    basis = BasisDictionary(np.asarray(params.decays, dtype=float))
    edges = np.linspace(stream.session[0], stream.session[1], params.baseline_bins + 1)
    fixed_panel = candidates is not None
    eligible, per_agent = _eligible_agents(stream, candidates, params.min_events)
    if not eligible:
        raise NoEligibleAgents(
            f"no agent reaches {params.min_events} events on day {stream.day!r}"
        )
    members = list(candidates) if fixed_panel else eligible
    skipped = [a for a in sorted(per_agent) if a not in eligible]
    if fixed_panel:
        skipped += [m for m in members if m not in per_agent]
    work = est.aggregate_remainder(stream, members)
    rest_events = int(np.count_nonzero(work.agent == est.REST_AGENT))
    panel = list(members)
    fits = []
    for agent in eligible:
        fits.append(
            est.fit_agent_vs_market(
                work, agent, basis, edges=edges,
                min_events=params.min_events, ridge=params.ridge,
            )
        )
    if fixed_panel or rest_events > 0:
        panel.append(est.REST_AGENT)
        if rest_events >= params.min_events:
            fits.append(
                est.fit_agent_vs_market(
                    work, est.REST_AGENT, basis, edges=edges,
                    min_events=params.min_events, ridge=params.ridge,
                )
            )
        else:
            skipped.append(est.REST_AGENT)
    lam = est.empirical_intensities(work, panel)
    return fits, panel, lam, skipped


def _fits_to_document(fits, panel, lam, skipped, stream) -> sc.FitsDocument:
    return sc.FitsDocument(
        day=stream.day,
        session=stream.session,
        agents=[sc.AgentFitPayload(**fit.to_dict()) for fit in fits],
        panel=panel,
        lam=lam.tolist(),
        skipped=skipped,
    )


def fit_handler(req: sc.FitRequest) -> sc.FitResponse:
    stream = req.events.to_stream()
    fits, panel, lam, skipped = fit_day(stream, req.params, req.agents)
    return sc.FitResponse(fits=_fits_to_document(fits, panel, lam, skipped, stream))


def _document_to_global(doc: sc.FitsDocument):
    fits = [
        est.AgentFitResult.from_dict(payload.model_dump()) for payload in doc.agents
    ]
    lam = np.asarray(doc.lam, dtype=float)
    return est.assemble_global(fits, lam, agents=doc.panel, day=doc.day)


def _number_or_none(value):
    if value is None or not np.isfinite(value):
        return None
    return float(value)


def _report_to_payload(report: attr.AttributionReport, session) -> sc.DayReport:
    # NaN marks undefined quantities internally; the wire format carries null
    data = report.to_dict()
    components = [
        dict(row, xi=_number_or_none(row["xi"]), u=_number_or_none(row["u"]))
        for row in data["components"]
    ]
    agents = [
        dict(row, rho=_number_or_none(row["rho"]), f=_number_or_none(row["f"]))
        for row in data["agents"]
    ]
    return sc.DayReport(
        day=data["day"],
        session=session,
        sigma2=None if not report.stable else report.sigma2,
        sigma2_poisson=report.sigma2_poisson,
        rho_spec=report.rho_spec,
        stable=report.stable,
        annualized=report.annualized,
        components=[sc.ComponentRow(**row) for row in components],
        agents=[sc.AgentRow(**row) for row in agents],
        notes=data["notes"],
    )


def attribute_handler(req: sc.AttributeRequest) -> sc.AttributeResponse:
    reports = []
    sessions = []
    daily = []
    panels = set()
    for doc in req.days:
        panels.add(tuple(doc.panel))
        gm = _document_to_global(doc)
        report = attr.build_report(
            gm, day=doc.day,
            half_tick=req.params.half_tick, open_price=req.params.open_price,
        )
        reports.append(report)
        sessions.append(doc.session)
        if report.stable:
            daily.append((gm.mu_bar, attr.u_vector(gm.summary, gm.delta)))
        else:
            daily.append(None)
    if len(panels) > 1:
        raise DimensionMismatch(
            "all days must share one agent panel for the ratio series"
        )
    ratios: list = [None] * len(reports)
    stable_idx = [i for i, d in enumerate(daily) if d is not None]
    if stable_idx:
        series = attr.sigma2_mu_ratio(
            [daily[i] for i in stable_idx], window=req.params.window_days
        )
        for pos, i in enumerate(stable_idx):
            ratios[i] = float(series[pos])
    return sc.AttributeResponse(
        reports=[_report_to_payload(r, s) for r, s in zip(reports, sessions)],
        ratio_days=[r.day for r in reports],
        sigma2_mu_ratio=ratios,
    )


def _agent_level(report: attr.AttributionReport, agent):
    rho = _number_or_none(report.rho.get(agent))
    xi = report.xi_merged(agent)
    return rho, xi


def control_handler(req: sc.ControlRequest) -> sc.ControlResponse:
    from ..pipeline import shuffle_control

    stream = req.events.to_stream()
    fits, panel, lam, skipped = fit_day(stream, req.params, req.agents)
    actual_report = attr.build_report(
        est.assemble_global(fits, lam, agents=panel, day=stream.day)
    )
    notes = []
    if not actual_report.stable:
        notes.append("actual day unstable; residuals omitted")
    rho_resid = {a: [] for a in panel}
    xi_resid = {a: {g: [] for g in attr.MERGED_TYPES} for a in panel}
    rho_ctrl = {a: [] for a in panel}
    xi_ctrl = {a: {g: [] for g in attr.MERGED_TYPES} for a in panel}
    used = 0
    for r in range(req.replicates):
        shuffled = shuffle_control(stream, req.seed + r)
        try:
            c_fits, c_panel, c_lam, _ = fit_day(shuffled, req.params, req.agents)
        except FlowvolError as exc:
            notes.append(f"replicate {r}: {exc}")
            continue
        c_report = attr.build_report(
            est.assemble_global(c_fits, c_lam, agents=c_panel, day=stream.day)
        )
        if not c_report.stable:
            notes.append(f"replicate {r}: unstable, skipped")
            continue
        used += 1
        for agent in panel:
            rho_a, xi_a = _agent_level(actual_report, agent)
            rho_c, xi_c = _agent_level(c_report, agent)
            if rho_a is not None and rho_c is not None:
                rho_ctrl[agent].append(rho_c)
                rho_resid[agent].append(rho_a - rho_c)
            for group in attr.MERGED_TYPES:
                xi_ctrl[agent][group].append(xi_c[group])
                xi_resid[agent][group].append(xi_a[group] - xi_c[group])

    def _mean(values):
        return float(np.mean(values)) if values else None

    rows = []
    for agent in panel:
        rho_a, xi_a = _agent_level(actual_report, agent)
        rows.append(
            sc.ControlAgentRow(
                agent=agent,
                rho_actual=rho_a,
                rho_control=_mean(rho_ctrl[agent]),
                rho_residual=_mean(rho_resid[agent]),
                xi_actual=xi_a,
                xi_control={g: _mean(xi_ctrl[agent][g]) for g in attr.MERGED_TYPES},
                xi_residual={g: _mean(xi_resid[agent][g]) for g in attr.MERGED_TYPES},
            )
        )
    return sc.ControlResponse(
        day=stream.day, replicates=used, agents=rows, notes=notes
    )


def features_handler(req: sc.FeaturesRequest) -> sc.FeaturesResponse:
    records = [RawOrderRecord(**payload.model_dump()) for payload in req.records]
    records.sort(key=lambda r: r.ts_ns)
    kept = []
    dropped_deep = 0
    for record in records:
        kind, delta = classify(record)
        if kind is None:
            dropped_deep += 1
            continue
        kept.append((record.t, record.agent, kind, delta))
    stream = EventStream(
        t=np.array([k[0] for k in kept]),
        agent=np.array([k[1] for k in kept], dtype=object),
        kind=np.array([k[2] for k in kept], dtype=object),
        delta=np.array([k[3] for k in kept]),
        session=req.session,
        day=req.day,
    )
    stream.validate()
    agents = sorted({r.agent for r in records})
    rows = []
    for agent in agents:
        feat = compute_features(
            records, stream, agent, day=req.day, presence=req.presence.get(agent)
        )
        rows.append(
            sc.FeatureRow(
                agent_id=feat.agent,
                day=feat.day,
                eod_position_ratio=feat.eod_position_ratio,
                order_lifetime_median_s=feat.order_lifetime_median,
                inter_event_time_median_s=feat.inter_event_time_median,
                aggressive_volume_fraction=feat.aggressive_volume_fraction,
                presence_l1=feat.presence_l1,
                counts=feat.counts,
                flags=feat.flags,
            )
        )
    return sc.FeaturesResponse(
        day=req.day,
        features=rows,
        dropped_deep_book=dropped_deep,
        events=sc.EventsPayload.from_stream(stream),
    )
