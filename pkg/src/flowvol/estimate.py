"""Least-squares contrast estimation of the agent-vs-market Hawkes model.

For one focus agent the intensity of each of its eight order-type components
is linear in a shared feature vector: K baseline-interval indicators, the
agent's own order flow filtered through each basis exponential (8L "self"
features) and the pooled flow of all other agents (8L "market" features).
The quadratic contrast  (1/T) int lambda^2 - (2/T) int lambda dN  is computed
exactly: between consecutive events every exponential feature decays at a
known rate, so all Gram integrals have closed forms and no discretization
grid is involved.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import (
    DimensionMismatch,
    EmptyHorizon,
    InsufficientEvents,
    SingularSystem,
    UnsortedInput,
)
from .events import EventStream
from .model import (
    EVENT_TYPES,
    PRICE_TYPES,
    TYPE_INDEX,
    BasisDictionary,
    BranchingSummary,
    HawkesModel,
    KernelMatrix,
    PiecewiseBaseline,
    compute_R,
    integrate_kernels,
    mean_intensities,
    recover_baselines,
    spectral_radius,
)

FIT_SCHEMA_VERSION = 1
REST_AGENT = "__rest__"

_N_TYPES = len(EVENT_TYPES)
_CHUNK = 8192


@dataclass
class FilteredFeatures:
    """One pass over a stream for one focus agent.

    Carries the feature matrix at the requested evaluation times (left
    limits), the per-focus-event feature rows used for the contrast's linear
    term, and the exact Gram integrals shared by all eight target types.
    """

    agent: str
    basis: BasisDictionary
    edges: np.ndarray
    session: tuple
    eval_times: np.ndarray
    matrix: np.ndarray
    focus_times: np.ndarray
    focus_kinds: np.ndarray
    focus_rows: np.ndarray
    gram_exp: np.ndarray
    gram_ind_exp: np.ndarray
    gram_ind: np.ndarray

    @property
    def n_features(self) -> int:
        return self.edges.size - 1 + 2 * _N_TYPES * self.basis.size


def _interval_left(edges, t):
    """Baseline interval of the left limit t- (edges themselves belong left)."""
    idx = np.searchsorted(edges, t, side="left") - 1
    return int(np.clip(idx, 0, edges.size - 2))


def _interval_right(edges, t):
    idx = np.searchsorted(edges, t, side="right") - 1
    return int(np.clip(idx, 0, edges.size - 2))


def filter_events(stream, agent, basis, eval_times=None, edges=None) -> FilteredFeatures:
    """Exact recursive evaluation of the baseline/self/market feature set.

    Events at time t contribute to features strictly after t, so all returned
    rows are left limits (the predictable convention the contrast requires).
    """
    stream.validate()
    agent = str(agent)
    t_open, t_close = stream.session
    if edges is None:
        edges = np.array([t_open, t_close])
    edges = np.asarray(edges, dtype=float)
    if eval_times is None:
        eval_times = np.array([])
    eval_times = np.asarray(eval_times, dtype=float)
    if eval_times.size and np.any(np.diff(eval_times) < 0):
        raise UnsortedInput("eval times must be nondecreasing")
    if eval_times.size and (eval_times[0] < t_open or eval_times[-1] > t_close):
        raise ValueError("eval times must lie within the session")

    L = basis.size
    K = edges.size - 1
    n_exp = 2 * _N_TYPES * L
    beta = np.tile(basis.decays, 2 * _N_TYPES)

    # column block (after the K indicators) for each event: self first
    kind_idx = np.array([TYPE_INDEX[k] for k in stream.kind], dtype=int)
    is_market = (stream.agent != agent).astype(int)
    col_base = (is_market * _N_TYPES + kind_idx) * L

    inner = [e for e in edges[1:-1] if t_open < e < t_close]
    focus_mask = stream.agent == agent
    focus_positions = np.flatnonzero(focus_mask)

    x = np.zeros(n_exp)
    gram_exp_raw = np.zeros((n_exp, n_exp))
    gram_exp_dec = np.zeros((n_exp, n_exp))
    gram_ind_exp = np.zeros((K, n_exp))
    gram_ind = np.zeros(K)

    seg_x = np.empty((_CHUNK, n_exp))
    seg_dt = np.empty(_CHUNK)
    seg_iv = np.empty(_CHUNK, dtype=int)
    n_seg = 0

    rows_eval = np.zeros((eval_times.size, K + n_exp))
    rows_focus = np.zeros((focus_positions.size, K + n_exp))

    def flush():
        nonlocal n_seg
        if n_seg == 0:
            return
        xs = seg_x[:n_seg]
        dts = seg_dt[:n_seg]
        ivs = seg_iv[:n_seg]
        dec = np.exp(-np.outer(dts, beta))
        ys = xs * dec
        gram_exp_raw[:, :] += xs.T @ xs
        gram_exp_dec[:, :] += ys.T @ ys
        np.add.at(gram_ind_exp, ivs, xs * (1.0 - dec) / beta)
        np.add.at(gram_ind, ivs, dts)
        n_seg = 0

    def push_segment(start, dt):
        nonlocal n_seg
        if dt <= 0.0:
            return
        seg_x[n_seg] = x
        seg_dt[n_seg] = dt
        seg_iv[n_seg] = _interval_right(edges, start)
        n_seg += 1
        if n_seg == _CHUNK:
            flush()

    ev_ptr = 0
    n_ev = eval_times.size
    cur = t_open
    i = 0
    n = stream.n
    focus_row = 0
    breaks = iter(inner + [t_close])
    next_edge = next(breaks)

    def record_evals(limit):
        """Left-limit feature rows for eval times in (cur, limit]."""
        nonlocal ev_ptr
        while ev_ptr < n_ev and eval_times[ev_ptr] <= limit:
            te = eval_times[ev_ptr]
            row = rows_eval[ev_ptr]
            row[_interval_left(edges, te)] = 1.0
            row[K:] = x * np.exp(-beta * (te - cur))
            ev_ptr += 1

    # eval times at the session open see an empty history
    while ev_ptr < n_ev and eval_times[ev_ptr] <= t_open:
        rows_eval[ev_ptr][_interval_left(edges, eval_times[ev_ptr])] = 1.0
        ev_ptr += 1

    while i < n or next_edge < t_close or cur < t_close:
        t_event = stream.t[i] if i < n else np.inf
        t_break = min(t_event, next_edge)
        if t_break > t_close:
            t_break = t_close
        record_evals(t_break)
        push_segment(cur, t_break - cur)
        x *= np.exp(-beta * (t_break - cur))
        cur = t_break
        if t_break == t_event:
            # process the whole tie group with pre-jump (left limit) rows
            j = i
            while j < n and stream.t[j] == t_event:
                j += 1
            for k in range(i, j):
                if focus_mask[k]:
                    row = rows_focus[focus_row]
                    row[_interval_left(edges, t_event)] = 1.0
                    row[K:] = x
                    focus_row += 1
            for k in range(i, j):
                c = col_base[k]
                x[c : c + L] += basis.decays
            i = j
        elif t_break == next_edge and next_edge < t_close:
            next_edge = next(breaks)
        if cur >= t_close:
            break
    flush()

    pair = beta[:, None] + beta[None, :]
    gram_exp = (gram_exp_raw - gram_exp_dec) / pair

    return FilteredFeatures(
        agent=agent,
        basis=basis,
        edges=edges,
        session=stream.session,
        eval_times=eval_times,
        matrix=rows_eval,
        focus_times=stream.t[focus_mask],
        focus_kinds=stream.kind[focus_mask],
        focus_rows=rows_focus,
        gram_exp=gram_exp,
        gram_ind_exp=gram_ind_exp,
        gram_ind=gram_ind,
    )


def assemble_normal_equations(features, target_kind, horizon=None):
    """Exact (A, b) of the contrast theta' A theta - 2 b' theta for one target.

    A is the (1/T)-normalized Gram of the feature set (shared by all
    targets); b samples the left-limit features at the focus agent's events
    of the requested type.
    """
    if horizon is None:
        horizon = features.session[1] - features.session[0]
    horizon = float(horizon)
    if horizon <= 0:
        raise EmptyHorizon("estimation horizon must be positive")
    if target_kind not in TYPE_INDEX:
        raise ValueError(f"unknown order type {target_kind!r}")
    K = features.edges.size - 1
    n_exp = features.gram_exp.shape[0]
    dim = K + n_exp
    a = np.zeros((dim, dim))
    a[:K, :K] = np.diag(features.gram_ind)
    a[:K, K:] = features.gram_ind_exp
    a[K:, :K] = features.gram_ind_exp.T
    a[K:, K:] = features.gram_exp
    a /= horizon
    a = 0.5 * (a + a.T)

    rows = features.focus_rows[features.focus_kinds == target_kind]
    b = rows.sum(axis=0) / horizon if rows.size else np.zeros(dim)
    return a, b


def contrast_value(a, b, theta) -> float:
    return float(theta @ a @ theta - 2.0 * b @ theta)


def solve_least_squares(a, b, ridge=None) -> np.ndarray:
    """Solve (A + ridge*Id) theta = b by symmetric factorization.

    The default ridge 1e-8 * trace(A)/dim is conditioning-only; coefficients
    stay unconstrained in sign.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or b.shape != (a.shape[0],):
        raise DimensionMismatch("need square A and a matching right-hand side")
    if ridge is None:
        ridge = 1e-8 * np.trace(a) / a.shape[0]
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    system = a + ridge * np.eye(a.shape[0])
    try:
        factor = cho_factor(system, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    return cho_solve(factor, b)


@dataclass
class AgentFitResult:
    """Per-agent, per-day output of the 16-type agent-vs-market estimation."""

    agent: str
    day: str
    basis: BasisDictionary
    edges: np.ndarray
    baseline: np.ndarray        # (8, K) piecewise rates per target type
    self_coeffs: np.ndarray     # (8 targets, 8 source types, L)
    market_coeffs: np.ndarray   # (8 targets, 8 source types, L)
    delta_hat: np.ndarray       # (8,) average signed jump per type
    contrast: np.ndarray        # (8,) contrast value at the minimizer
    flags: dict = field(default_factory=dict)
    n_events: int = 0

    def phi_self(self) -> np.ndarray:
        return self.self_coeffs.sum(axis=2)

    def phi_market(self) -> np.ndarray:
        return self.market_coeffs.sum(axis=2)

    def to_dict(self) -> dict:
        return {
            "agent": self.agent,
            "day": self.day,
            "decays": self.basis.decays.tolist(),
            "edges": self.edges.tolist(),
            "baseline": self.baseline.tolist(),
            "self_coeffs": self.self_coeffs.tolist(),
            "market_coeffs": self.market_coeffs.tolist(),
            "delta_hat": self.delta_hat.tolist(),
            "contrast": self.contrast.tolist(),
            "flags": dict(self.flags),
            "n_events": self.n_events,
            "shape": {
                "types": list(EVENT_TYPES),
                "L": self.basis.size,
                "K": int(self.edges.size - 1),
            },
        }

    @classmethod
    def from_dict(cls, payload) -> "AgentFitResult":
        basis = BasisDictionary(np.asarray(payload["decays"], dtype=float))
        return cls(
            agent=payload["agent"],
            day=payload.get("day", ""),
            basis=basis,
            edges=np.asarray(payload["edges"], dtype=float),
            baseline=np.asarray(payload["baseline"], dtype=float),
            self_coeffs=np.asarray(payload["self_coeffs"], dtype=float),
            market_coeffs=np.asarray(payload["market_coeffs"], dtype=float),
            delta_hat=np.asarray(payload["delta_hat"], dtype=float),
            contrast=np.asarray(payload["contrast"], dtype=float),
            flags=dict(payload.get("flags", {})),
            n_events=int(payload.get("n_events", 0)),
        )


def estimate_jump_sizes(stream, agent) -> np.ndarray:
    """Mean signed jump per price type; defaults to +/-1 below 3 events."""
    delta_hat = np.zeros(_N_TYPES)
    for kind, fallback in (("P+", 1.0), ("P-", -1.0)):
        jumps = stream.delta[stream.mask(agent=agent, kind=kind)]
        idx = TYPE_INDEX[kind]
        delta_hat[idx] = float(np.mean(jumps)) if jumps.size >= 3 else fallback
    return delta_hat


def fit_agent_vs_market(stream, agent, basis, edges=None, min_events=1000,
                        ridge=None, day=None) -> AgentFitResult:
    """Fit the eight target components of one agent against the market.

    `ridge` is the relative conditioning scale (multiplied by trace(A)/dim
    per target); None uses the solver default of 1e-8.
    """
    agent = str(agent)
    n_agent = int(np.count_nonzero(stream.agent == agent))
    if n_agent < min_events:
        raise InsufficientEvents(
            f"agent {agent} has {n_agent} events, below the {min_events} threshold"
        )
    features = filter_events(stream, agent, basis, edges=edges)
    horizon = stream.horizon
    K = features.edges.size - 1
    L = basis.size

    baseline = np.zeros((_N_TYPES, K))
    self_coeffs = np.zeros((_N_TYPES, _N_TYPES, L))
    market_coeffs = np.zeros((_N_TYPES, _N_TYPES, L))
    contrast = np.zeros(_N_TYPES)
    flags = {}
    for idx, kind in enumerate(EVENT_TYPES):
        a, b = assemble_normal_equations(features, kind, horizon)
        ridge_abs = None if ridge is None else ridge * np.trace(a) / a.shape[0]
        try:
            theta = solve_least_squares(a, b, ridge_abs)
        except SingularSystem as exc:
            flags[kind] = f"solver: {exc}"
            continue
        baseline[idx] = theta[:K]
        self_coeffs[idx] = theta[K : K + _N_TYPES * L].reshape(_N_TYPES, L)
        market_coeffs[idx] = theta[K + _N_TYPES * L :].reshape(_N_TYPES, L)
        contrast[idx] = contrast_value(a, b, theta)

    return AgentFitResult(
        agent=agent,
        day=day if day is not None else stream.day,
        basis=basis,
        edges=features.edges,
        baseline=baseline,
        self_coeffs=self_coeffs,
        market_coeffs=market_coeffs,
        delta_hat=estimate_jump_sizes(stream, agent),
        contrast=contrast,
        flags=flags,
        n_events=n_agent,
    )


def aggregate_remainder(stream, selected) -> EventStream:
    """Relabel every agent outside `selected` into the pooled rest-of-market id."""
    selected = set(map(str, selected))
    return stream.relabel(lambda a: a if a in selected else REST_AGENT)


@dataclass
class GlobalModel:
    """8M-dimensional stitched model plus its branching summary (when stable)."""

    model: HawkesModel
    lam: np.ndarray
    mu_bar: np.ndarray
    rho_spec: float
    summary: BranchingSummary | None
    stable: bool
    notes: list = field(default_factory=list)

    @property
    def components(self) -> tuple:
        return self.model.components

    @property
    def delta(self) -> np.ndarray:
        return self.model.jumps


def empirical_intensities(stream, agents) -> np.ndarray:
    """Per-component event rates (count / session length), agent-major order."""
    counts = stream.counts()
    horizon = stream.horizon
    lam = np.zeros(len(agents) * _N_TYPES)
    for i, agent in enumerate(agents):
        for j, kind in enumerate(EVENT_TYPES):
            lam[i * _N_TYPES + j] = counts.get((agent, kind), 0) / horizon
    return lam


def assemble_global(fits, lam, agents=None, day="") -> GlobalModel:
    """Tile per-agent fits into the global kernel matrix and summarize it.

    Each fitted agent's self block fills its diagonal block; its market block
    is copied identically opposite every other fitted agent. Agents named in
    `agents` but missing a fit contribute all-zero rows and columns. Baselines
    are recovered from the empirical rates as (Id - Phi) Lambda and kept as a
    single averaged step.
    """
    fitted = {fit.agent: fit for fit in fits}
    if agents is None:
        agents = [fit.agent for fit in fits]
    agents = [str(a) for a in agents]
    if len(set(agents)) != len(agents):
        raise ValueError("duplicate agent ids in panel")
    m = len(agents)
    n = m * _N_TYPES
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (n,):
        raise DimensionMismatch(f"lam must have {n} entries, got {lam.shape}")

    some_fit = next(iter(fitted.values()), None)
    if some_fit is None:
        raise ValueError("need at least one fitted agent")
    basis = some_fit.basis
    L = basis.size
    t_open, t_close = float(some_fit.edges[0]), float(some_fit.edges[-1])

    coeffs = np.zeros((n, n, L))
    delta = np.zeros(n)
    notes = []
    for i, agent in enumerate(agents):
        fit = fitted.get(agent)
        rows = slice(i * _N_TYPES, (i + 1) * _N_TYPES)
        if fit is None:
            notes.append(f"agent {agent} absent: parameters zeroed")
            delta[i * _N_TYPES + TYPE_INDEX["P+"]] = 1.0
            delta[i * _N_TYPES + TYPE_INDEX["P-"]] = -1.0
            continue
        if fit.basis.size != L or not np.array_equal(fit.basis.decays, basis.decays):
            raise ValueError("all fits must share one basis dictionary")
        delta[rows] = fit.delta_hat
        for j, other in enumerate(agents):
            cols = slice(j * _N_TYPES, (j + 1) * _N_TYPES)
            if other == agent:
                coeffs[rows, cols] = fit.self_coeffs
            elif other in fitted:
                coeffs[rows, cols] = fit.market_coeffs

    kernels = KernelMatrix(coeffs, basis)
    phi = integrate_kernels(kernels)
    rho = spectral_radius(phi)
    mu_bar = recover_baselines(lam, phi)
    components = tuple((a, k) for a in agents for k in EVENT_TYPES)
    model = HawkesModel(
        components=components,
        kernels=kernels,
        baseline=PiecewiseBaseline(np.array([t_open, t_close]), mu_bar[:, None]),
        jumps=delta,
    )
    stable = rho < 1.0
    summary = None
    if stable:
        r = compute_R(phi, stability_check=False)
        summary = BranchingSummary(phi=phi, r=r, lam=lam, rho_spec=rho)
    else:
        notes.append(f"unstable kernel matrix: spectral radius {rho:.4f}")
    return GlobalModel(
        model=model,
        lam=lam,
        mu_bar=mu_bar,
        rho_spec=rho,
        summary=summary,
        stable=stable,
        notes=notes,
    )


