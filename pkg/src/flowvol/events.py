"""Canonical labeled event streams and their CSV form.

One stream holds one trading day: time-ordered marked events carrying the
submitting agent, one of the eight level-I order types and the signed
mid-price jump in half-ticks (nonzero only for P+/P- events).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import UnsortedInput
from .model import PRICE_TYPES, TYPE_INDEX

EVENTS_HEADER = ("ts_ns", "agent_id", "event_type", "delta_half_ticks")


@dataclass
class EventStream:
    t: np.ndarray
    agent: np.ndarray
    kind: np.ndarray
    delta: np.ndarray
    session: tuple
    day: str = ""

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.agent = np.asarray(self.agent, dtype=object)
        self.kind = np.asarray(self.kind, dtype=object)
        self.delta = np.asarray(self.delta, dtype=float)
        self.session = (float(self.session[0]), float(self.session[1]))
        n = self.t.size
        if not (self.agent.size == self.kind.size == self.delta.size == n):
            raise ValueError("event columns must have equal length")

    @property
    def n(self) -> int:
        return int(self.t.size)

    @property
    def horizon(self) -> float:
        return self.session[1] - self.session[0]

    def validate(self) -> None:
        if self.session[1] <= self.session[0]:
            raise ValueError("session close must follow session open")
        if self.n == 0:
            return
        if np.any(np.diff(self.t) < 0):
            raise UnsortedInput("event timestamps must be nondecreasing")
        if self.t[0] < self.session[0] or self.t[-1] >= self.session[1]:
            raise ValueError("event times must lie within [open, close)")
        for kind, delta in zip(self.kind, self.delta):
            if kind not in TYPE_INDEX:
                raise ValueError(f"unknown event type {kind!r}")
            if kind == "P+" and delta <= 0:
                raise ValueError("P+ events need a positive jump")
            if kind == "P-" and delta >= 0:
                raise ValueError("P- events need a negative jump")
            if kind not in PRICE_TYPES and delta != 0:
                raise ValueError(f"{kind} events must have zero jump")

    def agents(self) -> tuple:
        seen = []
        for a in self.agent:
            if a not in seen:
                seen.append(a)
        return tuple(seen)

    def counts(self) -> dict:
        """Event count per (agent, type) pair."""
        out = {}
        for a, k in zip(self.agent, self.kind):
            out[(a, k)] = out.get((a, k), 0) + 1
        return out

    def mask(self, agent=None, kind=None) -> np.ndarray:
        keep = np.ones(self.n, dtype=bool)
        if agent is not None:
            keep &= self.agent == agent
        if kind is not None:
            keep &= self.kind == kind
        return keep

    def select(self, keep) -> "EventStream":
        return replace(
            self,
            t=self.t[keep],
            agent=self.agent[keep],
            kind=self.kind[keep],
            delta=self.delta[keep],
        )

    def relabel(self, mapper) -> "EventStream":
        """New stream with each agent id replaced by mapper(agent)."""
        agent = np.array([mapper(a) for a in self.agent], dtype=object)
        return replace(self, agent=agent)


def sort_canonical(stream: EventStream) -> EventStream:
    """Stable order by (time, agent id, type index)."""
    if stream.n == 0:
        return stream
    kind_idx = np.array([TYPE_INDEX[k] for k in stream.kind])
    order = np.lexsort((kind_idx, stream.agent.astype(str), stream.t))
    return stream.select(order)


def merge_streams(streams, session, day="") -> EventStream:
    """Concatenate and canonically sort same-day streams."""
    if not streams:
        return EventStream(
            np.array([]), np.array([], dtype=object), np.array([], dtype=object),
            np.array([]), session, day,
        )
    merged = EventStream(
        t=np.concatenate([s.t for s in streams]),
        agent=np.concatenate([s.agent for s in streams]),
        kind=np.concatenate([s.kind for s in streams]),
        delta=np.concatenate([s.delta for s in streams]),
        session=session,
        day=day,
    )
    return sort_canonical(merged)


def _format_delta(value: float) -> str:
    return repr(float(value))


def write_events_csv(stream: EventStream, path) -> None:
    """Canonical events.csv: integer nanosecond stamps, UTF-8, header row."""
    ts_ns = np.rint(stream.t * 1e9).astype(np.int64)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(EVENTS_HEADER) + "\n")
        for ns, agent, kind, delta in zip(ts_ns, stream.agent, stream.kind, stream.delta):
            fh.write(f"{ns},{agent},{kind},{_format_delta(delta)}\n")
