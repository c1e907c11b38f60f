"""Batch front door: simulate, fit, attribute, control, features, serve.

Every subcommand is a thin client over the service handlers. By default the
handlers run in-process; pass --server URL to talk to a running instance
over HTTP instead. File layout, seeds and config fully determine outputs,
so reruns are byte-identical.

Exit codes: 0 success, 2 validation failure, 3 partial failure (per-item
flags in the written summaries).
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from pydantic import ValidationError

from .config import RunConfig, parse_config
from .errors import ConfigError, FlowvolError
from .events import write_events_csv
from .pipeline import (
    decile_conditional_mean,
    ingest_events_csv,
    ingest_raw_csv,
    read_features_csv,
    write_features_csv,
    DailyAgentFeatures,
)
from .service import api, schemas as sc

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_PARTIAL = 3

_HANDLERS = {
    "simulate": (api.simulate_handler, sc.SimulateResponse),
    "fit": (api.fit_handler, sc.FitResponse),
    "attribute": (api.attribute_handler, sc.AttributeResponse),
    "control": (api.control_handler, sc.ControlResponse),
    "features": (api.features_handler, sc.FeaturesResponse),
}


class ServiceClient:
    """Dispatch requests to the in-process handlers or a remote server."""

    def __init__(self, server=None, timeout=600.0):
        self.server = server.rstrip("/") if server else None
        self.timeout = timeout

    def call(self, endpoint, request):
        handler, response_cls = _HANDLERS[endpoint]
        if self.server is None:
            return handler(request)
        import httpx

        resp = httpx.post(
            f"{self.server}/{endpoint}",
            json=request.model_dump(mode="json", by_alias=True),
            timeout=self.timeout,
        )
        if resp.status_code != 200:
            try:
                payload = resp.json()
            except ValueError:
                payload = {"detail": resp.text}
            raise FlowvolError(
                f"{endpoint} failed ({resp.status_code}): "
                f"{payload.get('error', '')} {payload.get('detail', '')}".strip()
            )
        return response_cls.model_validate(resp.json())


def _dump_json(payload, path):
    # allow_nan=False: undefined quantities must already be None by here
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n",
        encoding="utf-8",
    )


def _load_config(args) -> RunConfig:
    config = parse_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        config = replace(config, seed=args.seed)
    if getattr(args, "jobs", None) is not None:
        config = replace(config, jobs=args.jobs)
    return config.validate()


def _fit_params(config: RunConfig) -> sc.FitParams:
    return sc.FitParams(
        decays=config.basis().decays.tolist(),
        baseline_bins=config.baseline_bins,
        min_events=config.min_events,
        ridge=config.ridge,
    )


def _day_label(path) -> str:
    stem = Path(path).stem
    for prefix in ("events_", "raw_"):
        if stem.startswith(prefix):
            return stem[len(prefix):]
    return stem


def _read_day(path, config) -> sc.EventsPayload:
    result = ingest_events_csv(path, session=config.session, day=_day_label(path))
    return sc.EventsPayload.from_stream(result.stream)


def cmd_simulate(args) -> int:
    config = _load_config(args)
    spec = sc.ModelPayload.model_validate(
        json.loads(Path(args.spec).read_text(encoding="utf-8"))
    )
    request = sc.SimulateRequest(
        model_spec=spec,
        horizon=args.horizon,
        seed=config.seed,
        algorithm=args.algorithm,
        max_events=config.max_events,
    )
    client = ServiceClient(args.server)
    response = client.call("simulate", request)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_events_csv(response.events.to_stream(), out / "events.csv")
    _dump_json(response.truth.model_dump(mode="json"), out / "truth.json")
    print(f"simulate: {len(response.events.t)} events -> {out / 'events.csv'}")
    return EXIT_OK


def _union_panel(payloads, min_events):
    panel = []
    for payload in payloads:
        counts = {}
        for agent in payload.agent:
            counts[agent] = counts.get(agent, 0) + 1
        for agent in sorted(counts):
            if counts[agent] >= min_events and agent not in panel:
                panel.append(agent)
    return sorted(panel)


def cmd_fit(args) -> int:
    config = _load_config(args)
    client = ServiceClient(args.server)
    params = _fit_params(config)
    payloads = [_read_day(path, config) for path in args.events]
    panel = _union_panel(payloads, config.min_events)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def run_one(payload):
        request = sc.FitRequest(events=payload, params=params, agents=panel or None)
        return client.call("fit", request)

    statuses = {}
    with ThreadPoolExecutor(max_workers=config.jobs) as pool:
        futures = {payload.day: pool.submit(run_one, payload) for payload in payloads}
        for day, future in futures.items():
            try:
                response = future.result()
            except (FlowvolError, ValidationError) as exc:
                statuses[day] = f"failed: {exc}"
                continue
            path = out / f"fits_{day}.json"
            _dump_json(
                response.fits.model_dump(mode="json", by_alias=True), path
            )
            statuses[day] = "ok"
            print(f"fit: day {day} -> {path}")
    _dump_json({"days": statuses}, out / "fit_summary.json")
    failures = [d for d, s in statuses.items() if s != "ok"]
    for day in failures:
        print(f"fit: day {day} {statuses[day]}", file=sys.stderr)
    return EXIT_PARTIAL if failures else EXIT_OK


def _report_csv_rows(report: sc.DayReport):
    for comp in report.components:
        yield {
            "day": report.day, "row_type": "component", "agent": comp.agent,
            "type": comp.type, "lambda": comp.lam, "mu": comp.mu,
            "xi": comp.xi, "u": comp.u, "rho": "", "f": "",
            "sigma2": report.sigma2, "sigma2_poisson": report.sigma2_poisson,
            "annualized": report.annualized,
        }
    for agent in report.agents:
        yield {
            "day": report.day, "row_type": "agent", "agent": agent.agent,
            "type": "", "lambda": "", "mu": "", "xi": "", "u": "",
            "rho": agent.rho, "f": agent.f,
            "sigma2": report.sigma2, "sigma2_poisson": report.sigma2_poisson,
            "annualized": report.annualized,
        }


_REPORT_COLUMNS = (
    "day", "row_type", "agent", "type", "lambda", "mu", "xi", "u",
    "rho", "f", "sigma2", "sigma2_poisson", "annualized",
)


def _write_report_csv(reports, path):
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_REPORT_COLUMNS)
        writer.writeheader()
        for report in reports:
            for row in _report_csv_rows(report):
                writer.writerow(
                    {k: ("" if row[k] is None else row[k]) for k in _REPORT_COLUMNS}
                )


_DECILE_FEATURES = (
    "eod_position_ratio", "order_lifetime_median_s", "inter_event_time_median_s",
    "aggressive_volume_fraction", "presence_l1",
)


def _decile_summaries(reports, feature_rows):
    """Decile-conditioned means of attribution targets across agent-days."""
    by_key = {(row["agent_id"], row["day"]): row for row in feature_rows}
    targets = {}
    for report in reports:
        if not report.stable:
            continue
        horizon = report.session[1] - report.session[0]
        for agent in report.agents:
            key = (agent.agent, report.day)
            if key not in by_key:
                continue
            n_orders = horizon * sum(
                comp.lam for comp in report.components if comp.agent == agent.agent
            )
            row = {
                "rho": agent.rho,
                "f": agent.f,
                "rho_sigma2_per_order": (
                    agent.rho * report.sigma2 / n_orders
                    if agent.rho is not None and report.sigma2 and n_orders > 0
                    else None
                ),
            }
            for group, value in agent.xi_merged.items():
                row[f"xi_{group}"] = value
            targets[key] = row
    summaries = []
    target_names = sorted({name for row in targets.values() for name in row})
    for feature in _DECILE_FEATURES:
        for target_name in target_names:
            observations = []
            for key, row in targets.items():
                feat_value = by_key[key].get(feature)
                target_value = row.get(target_name)
                if feat_value is None or target_value is None:
                    continue
                observations.append((feat_value, target_value))
            if len(observations) < 10:
                continue
            summary = decile_conditional_mean(observations, feature=feature)
            payload = summary.to_dict()
            payload["target"] = target_name
            summaries.append(payload)
    return summaries


def cmd_attribute(args) -> int:
    config = _load_config(args)
    client = ServiceClient(args.server)
    days = []
    for path in args.fits:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        days.append(sc.FitsDocument.model_validate(payload))
    days.sort(key=lambda d: d.day)
    request = sc.AttributeRequest(
        days=days,
        params=sc.AttributeParams(
            window_days=config.window_days,
            half_tick=config.half_tick,
            open_price=config.open_price,
        ),
    )
    response = client.call("attribute", request)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report_payload = {
        "reports": [r.model_dump(mode="json", by_alias=True) for r in response.reports],
        "ratio_days": response.ratio_days,
        "sigma2_mu_ratio": response.sigma2_mu_ratio,
    }
    if args.features:
        feature_rows = read_features_csv(args.features)
        report_payload["deciles"] = _decile_summaries(response.reports, feature_rows)
    _dump_json(report_payload, out / "report.json")
    _write_report_csv(response.reports, out / "report.csv")
    unstable = [r.day for r in response.reports if not r.stable]
    for day in unstable:
        print(f"attribute: day {day} unstable, reported without R", file=sys.stderr)
    print(f"attribute: {len(response.reports)} day(s) -> {out / 'report.json'}")
    return EXIT_PARTIAL if unstable else EXIT_OK


def cmd_control(args) -> int:
    config = _load_config(args)
    client = ServiceClient(args.server)
    params = _fit_params(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    statuses = {}
    results = []
    for index, path in enumerate(args.events):
        payload = _read_day(path, config)
        request = sc.ControlRequest(
            events=payload,
            params=params,
            replicates=config.control_replicates,
            seed=config.seed + 1000 * index,
        )
        try:
            response = client.call("control", request)
        except (FlowvolError, ValidationError) as exc:
            statuses[payload.day] = f"failed: {exc}"
            continue
        statuses[payload.day] = "ok"
        results.append(response.model_dump(mode="json"))
    _dump_json({"days": statuses, "results": results}, out / "control_report.json")
    failures = [d for d, s in statuses.items() if s != "ok"]
    for day in failures:
        print(f"control: day {day} {statuses[day]}", file=sys.stderr)
    print(f"control: {len(results)} day(s) -> {out / 'control_report.json'}")
    return EXIT_PARTIAL if failures else EXIT_OK


def _read_presence(path):
    import csv

    presence = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            presence[row["agent_id"]] = float(row["presence_l1"])
    return presence


def cmd_features(args) -> int:
    config = _load_config(args)
    client = ServiceClient(args.server)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    presence = _read_presence(args.presence) if args.presence else {}
    all_rows = []
    for path in args.raw:
        day = _day_label(path)
        ingest = ingest_raw_csv(path, session=config.session, day=day)
        request = sc.FeaturesRequest(
            records=[
                sc.RawRecordPayload(
                    ts_ns=r.ts_ns, agent=r.agent, action=r.action, side=r.side,
                    price=r.price, size=r.size, order_id=r.order_id,
                    bb_pre=r.bb_pre, ba_pre=r.ba_pre, bb_post=r.bb_post,
                    ba_post=r.ba_post, aggressor=r.aggressor,
                )
                for r in ingest.records
            ],
            session=config.session,
            day=day,
            presence=presence,
        )
        response = client.call("features", request)
        write_events_csv(response.events.to_stream(), out / f"events_{day}.csv")
        for row in response.features:
            all_rows.append(
                DailyAgentFeatures(
                    agent=row.agent_id,
                    day=row.day,
                    eod_position_ratio=row.eod_position_ratio,
                    order_lifetime_median=row.order_lifetime_median_s,
                    inter_event_time_median=row.inter_event_time_median_s,
                    aggressive_volume_fraction=row.aggressive_volume_fraction,
                    presence_l1=row.presence_l1,
                    counts=row.counts,
                    flags=row.flags,
                )
            )
    write_features_csv(all_rows, out / "features.csv")
    print(f"features: {len(all_rows)} agent-day(s) -> {out / 'features.csv'}")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def _config_epilog() -> str:
    from dataclasses import fields

    lines = ["config file keys (key = value, one per line) and defaults:"]
    for f in fields(RunConfig):
        lines.append(f"  {f.name} = {f.default}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowvol",
        description=__doc__,
        epilog=_config_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", help="key = value run configuration file")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--jobs", type=int, help="parallel day workers")
        p.add_argument("--server", help="remote service URL (default: in-process)")
        if out:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("simulate", help="sample a synthetic market, write events.csv + truth.json")
    common(p)
    p.add_argument("--spec", required=True, help="model spec JSON file")
    p.add_argument("--horizon", type=float, required=True, help="seconds to simulate")
    p.add_argument("--algorithm", choices=["thinning", "cluster"], default="thinning")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit agent-vs-market models, one fits.json per day")
    common(p)
    p.add_argument("--events", nargs="+", required=True, help="events.csv files, one per day")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("attribute", help="attribution report from per-day fits")
    common(p)
    p.add_argument("--fits", nargs="+", required=True, help="fits.json files")
    p.add_argument("--features", help="features.csv for decile conditioning")
    p.set_defaults(func=cmd_attribute)

    p = sub.add_parser("control", help="shuffled-agent control fits and residuals")
    common(p)
    p.add_argument("--events", nargs="+", required=True, help="events.csv files, one per day")
    p.set_defaults(func=cmd_control)

    p = sub.add_parser("features", help="agent behavior features from raw.csv")
    common(p)
    p.add_argument("--raw", nargs="+", required=True, help="raw.csv files, one per day")
    p.add_argument("--presence", help="optional csv with agent_id,presence_l1 columns")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValidationError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"flowvol: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FlowvolError as exc:
        print(f"flowvol: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
