"""Synthetic labeled order flow from a Hawkes model, plus price-path tools.

Two independent samplers are provided: Ogata-style thinning (exact in law
for nonnegative kernels, intensity clamped at zero otherwise) and the
cluster/branching construction (nonnegative kernels only). Agreement of the
two is the Monte Carlo oracle used by the attribution tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ExplosionGuard, InsufficientSpan, NegativeKernel, Unstable
from .events import EventStream, sort_canonical
from .model import HawkesModel, integrate_kernels, spectral_radius

DEFAULT_EVENT_CAP = 10_000_000


def _stream_from_components(model, times, comps, session, day):
    times = np.asarray(times, dtype=float)
    comps = np.asarray(comps, dtype=int)
    agent = np.array([model.components[c][0] for c in comps], dtype=object)
    kind = np.array([model.components[c][1] for c in comps], dtype=object)
    delta = model.jumps[comps] if comps.size else np.array([])
    stream = EventStream(times, agent, kind, delta, session, day)
    return sort_canonical(stream)


def simulate_thinning(
    model: HawkesModel, horizon, seed, max_events=DEFAULT_EVENT_CAP, day=""
) -> EventStream:
    """Sample the model on [open, open + horizon) by thinning.

    The intensity at any time is max(0, baseline + kernel excitation); the
    dominating rate is refreshed after every candidate and at baseline step
    edges, dropping negative kernel contributions so it always majorizes.
    A single seeded generator drives all draws in chronological order.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    rng = np.random.default_rng(seed)
    basis = model.kernels.basis
    beta = basis.decays
    n, L = model.dim, basis.size
    alpha = model.kernels.coeffs.reshape(n, n * L)
    alpha_pos = np.clip(model.kernels.coeffs, 0.0, None).reshape(n, n * L)

    baseline = model.baseline
    t_open = float(baseline.edges[0])
    t_close = t_open + float(horizon)
    inner_edges = [e for e in baseline.edges[1:-1] if t_open < e < t_close]
    inner_edges.append(t_close)
    edge_pos = 0

    x = np.zeros(n * L)
    decay_tile = np.tile(beta, n)
    times, comps = [], []
    t = t_open
    mu_seg = baseline.value_at(t)
    next_edge = inner_edges[edge_pos]

    while t < t_close:
        bound = float(mu_seg.sum() + (alpha_pos @ x).sum())
        if bound <= 0.0:
            u = next_edge
        else:
            u = t + rng.exponential(1.0 / bound)
        if u >= next_edge:
            x *= np.exp(-decay_tile * (next_edge - t))
            t = next_edge
            edge_pos += 1
            if edge_pos >= len(inner_edges):
                break
            mu_seg = baseline.value_at(t)
            next_edge = inner_edges[edge_pos]
            continue
        x *= np.exp(-decay_tile * (u - t))
        t = u
        lam = mu_seg + alpha @ x
        np.maximum(lam, 0.0, out=lam)
        total = float(lam.sum())
        v = rng.uniform(0.0, bound)
        if v < total:
            c = int(np.searchsorted(np.cumsum(lam), v, side="right"))
            times.append(u)
            comps.append(c)
            x[c * L : (c + 1) * L] += beta
            if len(times) > max_events:
                raise ExplosionGuard(f"more than {max_events} events generated")

    return _stream_from_components(model, times, comps, (t_open, t_close), day)


def simulate_cluster(
    model: HawkesModel, horizon, seed, max_events=DEFAULT_EVENT_CAP, day=""
) -> EventStream:
    """Sample via the branching representation: immigrants plus offspring.

    Each event of source component s spawns Poisson(Phi[t][s]) children of
    component t at exponential lags drawn from the basis mixture. Requires
    nonnegative coefficients and a subcritical branching matrix.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    coeffs = model.kernels.coeffs
    if np.any(coeffs < 0):
        raise NegativeKernel("cluster representation needs nonnegative kernels")
    phi = integrate_kernels(model.kernels)
    if spectral_radius(phi) >= 1.0:
        raise Unstable("branching matrix is supercritical")

    rng = np.random.default_rng(seed)
    basis = model.kernels.basis
    beta = basis.decays
    n, L = model.dim, basis.size
    baseline = model.baseline
    t_open = float(baseline.edges[0])
    t_close = t_open + float(horizon)

    boundaries = [t_open]
    boundaries += [e for e in baseline.edges[1:-1] if t_open < e < t_close]
    boundaries.append(t_close)

    queue_t, queue_c = [], []
    for comp in range(n):
        for lo, hi in zip(boundaries[:-1], boundaries[1:]):
            rate = float(baseline.value_at(lo)[comp])
            count = rng.poisson(rate * (hi - lo)) if rate > 0 else 0
            if count:
                arrivals = np.sort(lo + rng.random(count) * (hi - lo))
                queue_t.extend(arrivals.tolist())
                queue_c.extend([comp] * count)

    order = np.lexsort((queue_c, queue_t))
    queue_t = [queue_t[i] for i in order]
    queue_c = [queue_c[i] for i in order]

    mixtures = []
    for tgt in range(n):
        row = []
        for src in range(n):
            mass = phi[tgt, src]
            row.append(coeffs[tgt, src] / mass if mass > 0 else None)
        mixtures.append(row)

    out_t, out_c = [], []
    i = 0
    while i < len(queue_t):
        tq, src = queue_t[i], queue_c[i]
        i += 1
        out_t.append(tq)
        out_c.append(src)
        if len(out_t) > max_events:
            raise ExplosionGuard(f"more than {max_events} events generated")
        for tgt in range(n):
            mass = phi[tgt, src]
            if mass <= 0:
                continue
            count = rng.poisson(mass)
            if not count:
                continue
            picks = rng.choice(L, size=count, p=mixtures[tgt][src])
            lags = rng.exponential(1.0 / beta[picks])
            for lag in lags:
                tc = tq + lag
                if tc < t_close:
                    queue_t.append(tc)
                    queue_c.append(tgt)

    return _stream_from_components(model, out_t, out_c, (t_open, t_close), day)


@dataclass
class PricePath:
    """Mid-price as a pure jump path: P(t) = p0 + sum of jumps at times <= t."""

    p0: float
    times: np.ndarray
    sizes: np.ndarray
    span: tuple

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.sizes = np.asarray(self.sizes, dtype=float)
        self.span = (float(self.span[0]), float(self.span[1]))

    def value_at(self, t) -> np.ndarray:
        cum = np.concatenate([[0.0], np.cumsum(self.sizes)])
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right")
        return self.p0 + cum[idx]

    @property
    def final(self) -> float:
        return self.p0 + float(self.sizes.sum())


def build_price_path(stream: EventStream, p0=0.0) -> PricePath:
    """Cumulative mid-price from the P+/P- events of a stream."""
    keep = (stream.kind == "P+") | (stream.kind == "P-")
    return PricePath(float(p0), stream.t[keep], stream.delta[keep], stream.session)


def realized_variance(path: PricePath, tau) -> float:
    """Mean squared increment over non-overlapping windows, per unit time."""
    tau = float(tau)
    if tau <= 0:
        raise ValueError("tau must be positive")
    span = path.span[1] - path.span[0]
    if span < 10 * tau:
        raise InsufficientSpan(f"span {span} shorter than 10 * tau = {10 * tau}")
    windows = int(span // tau)
    grid = path.span[0] + tau * np.arange(windows + 1)
    increments = np.diff(path.value_at(grid))
    return float(np.mean(increments**2) / tau)
