"""Volatility attribution: per-event, per-agent and exogenous decompositions.

Everything is expressed through the integrated reaction matrix R. Internal
units are half-ticks squared per second; conversion to a fractional annual
volatility happens only in `annualize`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptySeries,
    NonpositivePrice,
    Unstable,
    ZeroIntensity,
    ZeroSigma,
)
from .model import BranchingSummary, compute_R

#: seconds of trading per year: 8.5 hour sessions times 252 trading days
ANNUALIZATION_SECONDS = 8.5 * 3600.0 * 252.0

#: bid/ask and up/down merged reporting groups
MERGED_TYPES = {"P": ("P+", "P-"), "T": ("Ta", "Tb"), "L": ("La", "Lb"), "C": ("Ca", "Cb")}


def _check_summary(summary: BranchingSummary, delta):
    delta = np.asarray(delta, dtype=float)
    if summary is None or summary.r is None:
        raise Unstable("attribution needs a stable branching summary")
    if summary.rho_spec >= 1.0:
        raise Unstable(f"spectral radius {summary.rho_spec:.4f} >= 1")
    if delta.shape != (summary.r.shape[0],):
        raise DimensionMismatch("delta length must match the summary dimension")
    return delta


def _reaction_row(summary, delta):
    """v[m] = sum_i delta_i R[i, m]: mean signed price move per type-m event."""
    return delta @ summary.r


def sigma2_asymptotic(summary: BranchingSummary, delta) -> float:
    """Large-scale squared volatility sum_m Lambda_m (sum_i delta_i R[i,m])^2."""
    delta = _check_summary(summary, delta)
    v = _reaction_row(summary, delta)
    return float(summary.lam @ (v * v))


def xi_per_event(summary: BranchingSummary, delta) -> np.ndarray:
    """Average volatility (half-ticks) triggered by one event of each component."""
    delta = _check_summary(summary, delta)
    return np.abs(_reaction_row(summary, delta))


def u_vector(summary: BranchingSummary, delta) -> np.ndarray:
    """Reaction weights u with sum(mu_bar * u) = sigma^2 whenever Lambda = R mu_bar."""
    delta = _check_summary(summary, delta)
    v = _reaction_row(summary, delta)
    return summary.r.T @ (v * v)


def _agent_mask(components, agent) -> np.ndarray:
    agent = str(agent)
    return np.array([a == agent for a, _ in components], dtype=bool)


def rho_impact(summary, delta, mu_bar, components, agent, exact=False) -> float:
    """Fraction of squared volatility removed with all activity of one agent.

    The default keeps the full-model R matrix (removing the agent from the
    inversion is a second-order correction); exact=True re-inverts Id - Phi
    with the agent's rows and columns zeroed, for validating that claim.
    """
    delta = _check_summary(summary, delta)
    mu_bar = np.asarray(mu_bar, dtype=float)
    if mu_bar.shape != delta.shape or len(components) != delta.size:
        raise DimensionMismatch("mu_bar/components must match the summary dimension")
    sigma2 = sigma2_asymptotic(summary, delta)
    if sigma2 == 0.0:
        raise ZeroSigma("total squared volatility is zero")
    removed = _agent_mask(components, agent)
    keep = ~removed
    if exact:
        phi = summary.phi * np.outer(keep, keep)
        r = compute_R(phi)
        reduced = BranchingSummary(phi=phi, r=r, lam=r @ (mu_bar * keep),
                                   rho_spec=summary.rho_spec)
        return 1.0 - sigma2_asymptotic(reduced, delta * keep) / sigma2
    v_excl = (delta * keep) @ summary.r
    per_target = keep * (v_excl * v_excl) * (summary.r @ (mu_bar * keep))
    return 1.0 - float(np.sum(per_target)) / sigma2


def exogenous_fraction(mu_bar, lam, components, agent) -> float:
    """Baseline-driven share of the agent's total intensity."""
    mu_bar = np.asarray(mu_bar, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if mu_bar.shape != lam.shape or len(components) != lam.size:
        raise DimensionMismatch("mu_bar/lam/components disagree")
    mask = _agent_mask(components, agent)
    total = float(lam[mask].sum())
    if total <= 0.0:
        raise ZeroIntensity(f"agent {agent} has zero total intensity")
    return float(mu_bar[mask].sum()) / total


def sigma2_mu_ratio(daily, window=20) -> np.ndarray:
    """Per-day ratio of actual to baseline-only squared volatility.

    `daily` is an ordered sequence of (mu_bar_t, u_t) pairs. The reference
    replaces u_t by its mean over the centered window (t-w/2, t+w/2] of
    days, shrinking at the series edges so every day stays reportable.
    """
    if len(daily) == 0:
        raise EmptySeries("need at least one day")
    mus = [np.asarray(m, dtype=float) for m, _ in daily]
    us = [np.asarray(u, dtype=float) for _, u in daily]
    half = window // 2
    ratios = np.empty(len(daily))
    for t in range(len(daily)):
        lo = max(0, t - half + 1)
        hi = min(len(daily), t + half + 1)
        u_bar = np.mean(us[lo:hi], axis=0)
        actual = float(mus[t] @ us[t])
        reference = float(mus[t] @ u_bar)
        ratios[t] = actual / reference if reference != 0 else np.nan
    return ratios


def annualize(sigma2, half_tick, open_price) -> float:
    """Fractional annual volatility from half-ticks^2 per second."""
    if sigma2 < 0:
        raise ValueError("sigma2 must be nonnegative")
    if open_price <= 0:
        raise NonpositivePrice("open price must be positive")
    return float(np.sqrt(sigma2 * ANNUALIZATION_SECONDS) * half_tick / open_price)


@dataclass
class AttributionReport:
    """Per-day attribution bundle ready for JSON/CSV emission."""

    day: str
    sigma2: float
    sigma2_poisson: float
    rho_spec: float
    stable: bool
    components: tuple
    lam: np.ndarray
    mu_bar: np.ndarray
    xi: np.ndarray
    u: np.ndarray
    rho: dict
    f: dict
    annualized: float | None = None
    control_residuals: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def consistency_residual(self) -> float:
        """|sigma^2 - sum(mu_bar * u)|, an exact identity up to roundoff."""
        return abs(self.sigma2 - float(self.mu_bar @ self.u))

    def agents(self) -> tuple:
        seen = []
        for a, _ in self.components:
            if a not in seen:
                seen.append(a)
        return tuple(seen)

    def xi_merged(self, agent) -> dict:
        """Intensity-weighted mean xi over the merged type groups of one agent."""
        out = {}
        for group, kinds in MERGED_TYPES.items():
            idx = [
                i
                for i, (a, k) in enumerate(self.components)
                if a == agent and k in kinds
            ]
            weight = float(self.lam[idx].sum())
            if weight > 0:
                out[group] = float(self.lam[idx] @ self.xi[idx]) / weight
            else:
                out[group] = 0.0
        return out

    def to_dict(self) -> dict:
        payload = {
            "day": self.day,
            "sigma2": self.sigma2,
            "sigma2_poisson": self.sigma2_poisson,
            "rho_spec": self.rho_spec,
            "stable": self.stable,
            "annualized": self.annualized,
            "components": [
                {
                    "agent": a,
                    "type": k,
                    "lambda": float(self.lam[i]),
                    "mu": float(self.mu_bar[i]),
                    "xi": float(self.xi[i]),
                    "u": float(self.u[i]),
                }
                for i, (a, k) in enumerate(self.components)
            ],
            "agents": [
                {
                    "agent": a,
                    "rho": self.rho.get(a),
                    "f": self.f.get(a),
                    "xi_merged": self.xi_merged(a),
                }
                for a in self.agents()
            ],
            "notes": list(self.notes),
        }
        if self.control_residuals:
            payload["control_residuals"] = self.control_residuals
        return payload


def build_report(global_model, day="", half_tick=None, open_price=None) -> AttributionReport:
    """Attribution quantities of one stitched day."""
    gm = global_model
    delta = gm.delta
    lam = gm.lam
    sigma2_poisson = float(lam @ (delta * delta))
    if not gm.stable or gm.summary is None:
        return AttributionReport(
            day=day, sigma2=float("nan"),
            sigma2_poisson=sigma2_poisson, rho_spec=gm.rho_spec, stable=False,
            components=gm.components, lam=lam, mu_bar=gm.mu_bar,
            xi=np.full(lam.shape, np.nan), u=np.full(lam.shape, np.nan),
            rho={}, f={}, notes=list(gm.notes),
        )
    summary = gm.summary
    sigma2 = sigma2_asymptotic(summary, delta)
    xi = xi_per_event(summary, delta)
    u = u_vector(summary, delta)
    rho = {}
    f = {}
    for agent in gm.model.agents:
        try:
            rho[agent] = rho_impact(summary, delta, gm.mu_bar, gm.components, agent)
        except ZeroSigma:
            rho[agent] = float("nan")
        try:
            f[agent] = exogenous_fraction(gm.mu_bar, lam, gm.components, agent)
        except ZeroIntensity:
            f[agent] = float("nan")
    annualized = None
    if half_tick is not None and open_price is not None:
        annualized = annualize(sigma2, half_tick, open_price)
    return AttributionReport(
        day=day,
        sigma2=sigma2,
        sigma2_poisson=sigma2_poisson,
        rho_spec=gm.rho_spec,
        stable=True,
        components=gm.components,
        lam=lam,
        mu_bar=gm.mu_bar,
        xi=xi,
        u=u,
        rho=rho,
        f=f,
        annualized=annualized,
        notes=list(gm.notes),
    )
