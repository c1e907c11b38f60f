"""Raw order ingestion, level-I event classification and behavior features.

Raw records must carry their own level-I quote context (best bid/ask before
and after): no order book is reconstructed here. Depth-of-book activity is
dropped and counted, never classified.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InconsistentQuotes,
    SchemaViolation,
    TooFewObservations,
    UnparseableTimestamp,
)
from .events import EVENTS_HEADER, EventStream
from .model import EVENT_TYPES, TYPE_INDEX

RAW_HEADER = (
    "ts_ns", "agent_id", "action", "side", "price_ht", "size", "order_id",
    "bb_pre", "ba_pre", "bb_post", "ba_post", "aggressor",
)
ACTIONS = ("insert", "cancel", "modify", "trade")
SIDES = ("bid", "ask")
DEFAULT_SESSION = (0.0, 8.5 * 3600.0)


@dataclass
class RawOrderRecord:
    ts_ns: int
    agent: str
    action: str
    side: str
    price: float
    size: float
    order_id: str
    bb_pre: float
    ba_pre: float
    bb_post: float
    ba_post: float
    aggressor: bool

    @property
    def t(self) -> float:
        return self.ts_ns / 1e9


def classify(record: RawOrderRecord):
    """Level-I event type and the mid jump (half-ticks) of one raw record.

    Returns (kind, delta) with kind None for depth-of-book activity. Any
    record that moves the mid is a price event whatever its action.
    """
    if record.bb_pre >= record.ba_pre or record.bb_post >= record.ba_post:
        raise InconsistentQuotes(
            f"crossed quotes around ts_ns={record.ts_ns} agent={record.agent}"
        )
    mid_pre = 0.5 * (record.bb_pre + record.ba_pre)
    mid_post = 0.5 * (record.bb_post + record.ba_post)
    delta = mid_post - mid_pre
    if delta != 0.0:
        return ("P+", delta) if delta > 0 else ("P-", delta)
    side = "a" if record.side == "ask" else "b"
    best = record.ba_pre if record.side == "ask" else record.bb_pre
    at_best = record.price == best
    if record.action == "trade":
        return (f"T{side}", 0.0) if at_best else (None, 0.0)
    if record.action == "insert":
        return (f"L{side}", 0.0) if at_best else (None, 0.0)
    if record.action in ("cancel", "modify"):
        return (f"C{side}", 0.0) if at_best else (None, 0.0)
    return (None, 0.0)


@dataclass
class IngestResult:
    stream: EventStream
    records: list = field(default_factory=list)
    dropped_out_of_session: int = 0
    dropped_deep_book: int = 0


def _parse_ts(value, row):
    try:
        return int(value)
    except ValueError as exc:
        raise UnparseableTimestamp(f"bad timestamp {value!r}", row=row) from exc


def _parse_float(value, name, row):
    try:
        return float(value)
    except ValueError as exc:
        raise SchemaViolation(f"bad {name} value {value!r}", row=row) from exc


def ingest_events_csv(path, session=DEFAULT_SESSION, day="") -> IngestResult:
    """Read the pre-classified events.csv schema into a validated stream."""
    rows = []
    dropped = 0
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != EVENTS_HEADER:
            raise SchemaViolation(f"expected header {','.join(EVENTS_HEADER)}", row=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(EVENTS_HEADER):
                raise SchemaViolation(f"expected {len(EVENTS_HEADER)} fields", row=lineno)
            ts = _parse_ts(row[0], lineno)
            kind = row[2].strip()
            if kind not in TYPE_INDEX:
                raise SchemaViolation(f"unknown event type {kind!r}", row=lineno)
            delta = _parse_float(row[3], "delta", lineno)
            t = ts / 1e9
            if not (session[0] <= t < session[1]):
                dropped += 1
                continue
            rows.append((t, lineno, row[1].strip(), kind, delta))
    rows.sort(key=lambda r: (r[0], r[1]))
    stream = EventStream(
        t=np.array([r[0] for r in rows]),
        agent=np.array([r[2] for r in rows], dtype=object),
        kind=np.array([r[3] for r in rows], dtype=object),
        delta=np.array([r[4] for r in rows]),
        session=session,
        day=day,
    )
    stream.validate()
    return IngestResult(stream=stream, dropped_out_of_session=dropped)


def ingest_raw_csv(path, session=DEFAULT_SESSION, day="") -> IngestResult:
    """Read raw.csv, classify each record and keep the level-I events."""
    records = []
    dropped_session = 0
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != RAW_HEADER:
            raise SchemaViolation(f"expected header {','.join(RAW_HEADER)}", row=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(RAW_HEADER):
                raise SchemaViolation(f"expected {len(RAW_HEADER)} fields", row=lineno)
            ts = _parse_ts(row[0], lineno)
            action = row[2].strip()
            if action not in ACTIONS:
                raise SchemaViolation(f"unknown action {action!r}", row=lineno)
            side = row[3].strip()
            if side not in SIDES:
                raise SchemaViolation(f"unknown side {side!r}", row=lineno)
            record = RawOrderRecord(
                ts_ns=ts,
                agent=row[1].strip(),
                action=action,
                side=side,
                price=_parse_float(row[4], "price", lineno),
                size=_parse_float(row[5], "size", lineno),
                order_id=row[6].strip(),
                bb_pre=_parse_float(row[7], "bb_pre", lineno),
                ba_pre=_parse_float(row[8], "ba_pre", lineno),
                bb_post=_parse_float(row[9], "bb_post", lineno),
                ba_post=_parse_float(row[10], "ba_post", lineno),
                aggressor=row[11].strip() in ("1", "true", "True"),
            )
            if not (session[0] <= record.t < session[1]):
                dropped_session += 1
                continue
            records.append((lineno, record))
    records.sort(key=lambda r: (r[1].ts_ns, r[0]))
    kept = []
    dropped_deep = 0
    for lineno, record in records:
        kind, delta = classify(record)
        if kind is None:
            dropped_deep += 1
            continue
        kept.append((record.t, record.agent, kind, delta))
    stream = EventStream(
        t=np.array([r[0] for r in kept]),
        agent=np.array([r[1] for r in kept], dtype=object),
        kind=np.array([r[2] for r in kept], dtype=object),
        delta=np.array([r[3] for r in kept]),
        session=session,
        day=day,
    )
    stream.validate()
    return IngestResult(
        stream=stream,
        records=[r for _, r in records],
        dropped_out_of_session=dropped_session,
        dropped_deep_book=dropped_deep,
    )


def shuffle_control(stream: EventStream, seed) -> EventStream:
    """Permute agent labels independently within each event type.

    Timestamps, types and jumps are untouched, so per-(agent, type) counts
    are preserved exactly while order timing is randomized across agents.
    """
    rng = np.random.default_rng(seed)
    agent = stream.agent.copy()
    for kind in EVENT_TYPES:
        idx = np.flatnonzero(stream.kind == kind)
        if idx.size > 1:
            agent[idx] = agent[idx[rng.permutation(idx.size)]]
    out = EventStream(
        t=stream.t.copy(),
        agent=agent,
        kind=stream.kind.copy(),
        delta=stream.delta.copy(),
        session=stream.session,
        day=stream.day,
    )
    return out


@dataclass
class DailyAgentFeatures:
    agent: str
    day: str
    eod_position_ratio: float | None
    order_lifetime_median: float | None
    inter_event_time_median: float | None
    aggressive_volume_fraction: float | None
    presence_l1: float | None
    counts: dict
    flags: list = field(default_factory=list)

    def to_row(self) -> dict:
        row = {
            "agent_id": self.agent,
            "day": self.day,
            "eod_position_ratio": self.eod_position_ratio,
            "order_lifetime_median_s": self.order_lifetime_median,
            "inter_event_time_median_s": self.inter_event_time_median,
            "aggressive_volume_fraction": self.aggressive_volume_fraction,
            "presence_l1": self.presence_l1,
        }
        for kind in EVENT_TYPES:
            row[f"count_{kind}"] = self.counts.get(kind, 0)
        return row


def compute_features(records, stream, agent, day="", presence=None) -> DailyAgentFeatures:
    """Behavior features of one agent over one day of raw records.

    Presence at the best quotes needs full book state and is never computed:
    it is copied from the optional `presence` argument or left absent.
    """
    agent = str(agent)
    flags = []
    mine = [r for r in records if r.agent == agent]

    bought = sold = 0.0
    aggressive = 0.0
    for r in mine:
        if r.action != "trade":
            continue
        buys = (r.side == "ask") == bool(r.aggressor)
        if buys:
            bought += r.size
        else:
            sold += r.size
        if r.aggressor:
            aggressive += r.size
    volume = bought + sold
    if volume > 0:
        eod_ratio = 100.0 * abs(bought - sold) / volume
        aggressive_fraction = 100.0 * aggressive / volume
    else:
        eod_ratio = None
        aggressive_fraction = None
        flags.append("no_trades")

    inserts = {}
    lifetimes = []
    missing_ids = False
    for r in mine:
        if not r.order_id:
            if r.action in ("insert", "cancel", "modify"):
                missing_ids = True
            continue
        if r.action == "insert":
            inserts.setdefault(r.order_id, r.t)
        elif r.action in ("cancel", "modify") and r.order_id in inserts:
            lifetimes.append(r.t - inserts.pop(r.order_id))
    if missing_ids:
        flags.append("missing_order_ids")
    lifetime_median = float(np.median(lifetimes)) if lifetimes else None
    if lifetime_median is None and not missing_ids and any(
        r.action == "insert" for r in mine
    ):
        flags.append("no_matched_lifetimes")

    own_times = stream.t[stream.agent == agent]
    inter_median = (
        float(np.median(np.diff(own_times))) if own_times.size >= 2 else None
    )

    counts = {}
    for kind in EVENT_TYPES:
        counts[kind] = int(np.count_nonzero(stream.mask(agent=agent, kind=kind)))

    return DailyAgentFeatures(
        agent=agent,
        day=day or stream.day,
        eod_position_ratio=eod_ratio,
        order_lifetime_median=lifetime_median,
        inter_event_time_median=inter_median,
        aggressive_volume_fraction=aggressive_fraction,
        presence_l1=presence,
        counts=counts,
        flags=flags,
    )


@dataclass
class DecileSummary:
    feature: str
    edges: np.ndarray
    means: np.ndarray
    standard_errors: np.ndarray
    counts: np.ndarray

    def to_dict(self) -> dict:
        return {
            "feature": self.feature,
            "edges": self.edges.tolist(),
            "means": self.means.tolist(),
            "standard_errors": self.standard_errors.tolist(),
            "counts": self.counts.tolist(),
        }


def decile_conditional_mean(observations, feature="") -> DecileSummary:
    """Mean and standard error of a target within each feature decile.

    Observations are (feature value, target value) pairs pooled across
    agent-days; deciles are rank-based with ties kept in input order, so
    per-decile counts differ by at most one.
    """
    pairs = [(float(f), float(t)) for f, t in observations]
    if len(pairs) < 10:
        raise TooFewObservations(f"need >= 10 observations, got {len(pairs)}")
    values = np.array([p[0] for p in pairs])
    targets = np.array([p[1] for p in pairs])
    order = np.argsort(values, kind="stable")
    groups = np.array_split(order, 10)
    means = np.empty(10)
    ses = np.empty(10)
    counts = np.empty(10, dtype=int)
    edges = np.empty(11)
    edges[0] = values[order[0]]
    for q, grp in enumerate(groups):
        sample = targets[grp]
        counts[q] = sample.size
        means[q] = sample.mean()
        ses[q] = sample.std(ddof=1) / np.sqrt(sample.size) if sample.size > 1 else 0.0
        edges[q + 1] = values[grp[-1]]
    return DecileSummary(
        feature=feature, edges=edges, means=means, standard_errors=ses, counts=counts
    )


FEATURE_COLUMNS = (
    "agent_id", "day", "eod_position_ratio", "order_lifetime_median_s",
    "inter_event_time_median_s", "aggressive_volume_fraction", "presence_l1",
) + tuple(f"count_{kind}" for kind in EVENT_TYPES)


def write_features_csv(features, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=FEATURE_COLUMNS)
        writer.writeheader()
        for feat in features:
            row = feat.to_row()
            writer.writerow({k: ("" if row[k] is None else row[k]) for k in FEATURE_COLUMNS})


def read_features_csv(path) -> list:
    """Rows of features.csv as dicts with floats where present."""
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != FEATURE_COLUMNS:
            raise SchemaViolation("unexpected features.csv header", row=1)
        for row in reader:
            parsed = {"agent_id": row["agent_id"], "day": row["day"]}
            for key in FEATURE_COLUMNS[2:]:
                parsed[key] = float(row[key]) if row[key] not in ("", None) else None
            out.append(parsed)
    return out
