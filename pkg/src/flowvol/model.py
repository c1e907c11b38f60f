"""Hawkes model containers and the integrated branching-ratio algebra.

All kernels are decomposed over a dictionary of unit-mass exponentials
g_l(s) = b_l * exp(-b_l * s), so the integrated kernel matrix is simply the
sum of the coefficients over the dictionary index and needs no quadrature.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

from .errors import (
    DegenerateDenominator,
    DimensionMismatch,
    NegativeBaselineWarning,
    NonConvergence,
    Singular,
    Unstable,
)

EVENT_TYPES = ("P+", "P-", "Ta", "Tb", "La", "Lb", "Ca", "Cb")
PRICE_TYPES = ("P+", "P-")
TYPE_INDEX = {name: i for i, name in enumerate(EVENT_TYPES)}

#: trading session used throughout: 8.5 hours of continuous trading, in seconds
SESSION_SECONDS = 8.5 * 3600.0


def _as_float_array(values, name):
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


@dataclass(frozen=True, eq=False)
class BasisDictionary:
    """Dictionary of L unit-mass exponential kernels b_l * exp(-b_l * s)."""

    decays: np.ndarray

    def __post_init__(self):
        decays = _as_float_array(self.decays, "decays")
        if decays.ndim != 1 or decays.size < 1:
            raise ValueError("decays must be a non-empty 1-d sequence")
        if np.any(decays <= 0):
            raise ValueError("decays must be strictly positive")
        if np.any(np.diff(decays) <= 0):
            raise ValueError("decays must be strictly increasing")
        object.__setattr__(self, "decays", decays)

    @property
    def size(self) -> int:
        return int(self.decays.size)

    def density(self, lags) -> np.ndarray:
        """Basis values g_l(s) at nonnegative lags, shape (L, len(lags))."""
        s = np.atleast_1d(np.asarray(lags, dtype=float))
        out = self.decays[:, None] * np.exp(-self.decays[:, None] * s[None, :])
        out[:, s < 0] = 0.0
        return out

    @classmethod
    def log_spaced(cls, count=10, tau_min=1e-6, tau_max=1.0):
        """Decays 1/tau for timescales tau log-spaced on [tau_min, tau_max]."""
        if count == 1:
            taus = np.array([tau_max], dtype=float)
        else:
            taus = np.logspace(np.log10(tau_min), np.log10(tau_max), count)
        return cls(np.sort(1.0 / taus))


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """Kernel coefficient tensor, indexed [target][source][basis element].

    Coefficients may be negative: inhibition is allowed and the estimator
    places no positivity constraint on them.
    """

    coeffs: np.ndarray
    basis: BasisDictionary

    def __post_init__(self):
        coeffs = _as_float_array(self.coeffs, "coeffs")
        if coeffs.ndim != 3 or coeffs.shape[0] != coeffs.shape[1]:
            raise ValueError("coeffs must have shape (dim, dim, L)")
        if coeffs.shape[2] != self.basis.size:
            raise ValueError("third coeff axis must match the basis size")
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def dim(self) -> int:
        return int(self.coeffs.shape[0])

    @classmethod
    def zeros(cls, dim, basis):
        return cls(np.zeros((dim, dim, basis.size)), basis)


@dataclass(frozen=True, eq=False)
class PiecewiseBaseline:
    """Piecewise-constant exogenous rates, one row of K steps per component.

    Outside the edge span the nearest step value extends as a constant, so
    a single-interval baseline behaves as a true constant rate.
    """

    edges: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        edges = _as_float_array(self.edges, "edges")
        values = _as_float_array(self.values, "values")
        if edges.ndim != 1 or edges.size < 2:
            raise ValueError("edges must contain at least two boundaries")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("edges must be strictly increasing")
        if values.ndim != 2 or values.shape[1] != edges.size - 1:
            raise ValueError("values must have shape (dim, len(edges) - 1)")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    @property
    def steps(self) -> int:
        return int(self.values.shape[1])

    def interval_index(self, t) -> np.ndarray:
        """Index of the step active at time t (right-continuous at edges)."""
        idx = np.searchsorted(self.edges, np.asarray(t, dtype=float), side="right") - 1
        return np.clip(idx, 0, self.steps - 1)

    def value_at(self, t) -> np.ndarray:
        return self.values[:, self.interval_index(t)]

    def time_average(self) -> np.ndarray:
        widths = np.diff(self.edges)
        return self.values @ widths / widths.sum()

    @classmethod
    def constant(cls, rates, t_open=0.0, t_close=SESSION_SECONDS):
        rates = np.atleast_1d(np.asarray(rates, dtype=float))
        return cls(np.array([t_open, t_close]), rates[:, None])

    @classmethod
    def session_bins(cls, dim, bins=17, t_open=0.0, t_close=SESSION_SECONDS):
        return cls(np.linspace(t_open, t_close, bins + 1), np.zeros((dim, bins)))


@dataclass(frozen=True, eq=False)
class HawkesModel:
    """Labeled multivariate Hawkes model over (agent, order type) components."""

    components: tuple
    kernels: KernelMatrix
    baseline: PiecewiseBaseline
    jumps: np.ndarray

    def __post_init__(self):
        components = tuple((str(a), str(k)) for a, k in self.components)
        jumps = _as_float_array(self.jumps, "jumps")
        n = len(components)
        if self.kernels.dim != n or self.baseline.dim != n or jumps.size != n:
            raise DimensionMismatch(
                f"components ({n}), kernels ({self.kernels.dim}), baseline "
                f"({self.baseline.dim}) and jumps ({jumps.size}) disagree"
            )
        for (agent, kind), delta in zip(components, jumps):
            if kind not in TYPE_INDEX:
                raise ValueError(f"unknown order type {kind!r}")
            if kind == "P+" and delta <= 0:
                raise ValueError(f"({agent}, P+) needs a positive jump size")
            if kind == "P-" and delta >= 0:
                raise ValueError(f"({agent}, P-) needs a negative jump size")
            if kind not in PRICE_TYPES and delta != 0:
                raise ValueError(f"({agent}, {kind}) must have zero jump size")
        object.__setattr__(self, "components", components)
        object.__setattr__(self, "jumps", jumps)

    @property
    def dim(self) -> int:
        return len(self.components)

    @property
    def agents(self) -> tuple:
        seen = []
        for agent, _ in self.components:
            if agent not in seen:
                seen.append(agent)
        return tuple(seen)

    def component_index(self, agent, kind) -> int:
        return self.components.index((str(agent), str(kind)))


@dataclass(frozen=True, eq=False)
class BranchingSummary:
    """Integrated branching quantities of a stable model."""

    phi: np.ndarray
    r: np.ndarray
    lam: np.ndarray
    rho_spec: float


def integrate_kernels(kernels: KernelMatrix) -> np.ndarray:
    """Branching-ratio matrix: sum of coefficients over the unit-mass basis."""
    return np.asarray(kernels.coeffs.sum(axis=2), dtype=float)


def spectral_radius(phi, tol=1e-10, max_iter=10000) -> float:
    """Spectral radius of |phi| by shifted power iteration.

    The +1 shift keeps the iteration convergent on nonnegative matrices whose
    dominant eigenvalues come in plus/minus pairs (pure cross-excitation).
    Defective dominant structure (feed-forward excitation graphs are nilpotent)
    slows plain power iteration to O(1/k); those cases fall back to Gelfand
    bounds by repeated squaring, which resolves nilpotency exactly.
    """
    a = np.abs(np.asarray(phi, dtype=float))
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch("phi must be square")
    n = a.shape[0]
    if n == 0 or not a.any():
        return 0.0
    shift = 1.0
    v = np.full(n, 1.0 / np.sqrt(n))
    estimate = np.inf
    for _ in range(max_iter):
        w = a @ v + shift * v
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0
        v = w / norm
        previous, estimate = estimate, norm - shift
        if abs(estimate - previous) <= tol:
            return max(estimate, 0.0)
    return _gelfand_radius(a, tol)


def _gelfand_radius(a, tol, max_squarings=80):
    """rho(a) as the limit of max-entry norms of a^(2^m), rescaled each step.

    Early estimates carry an O(m/2^m) bias for defective eigenvalues and can
    coincide by accident, so agreement only counts after ten squarings.
    """
    m = a.copy()
    log_scale = 0.0
    power = 1.0
    estimate = np.inf
    for step in range(max_squarings):
        peak = float(np.max(m))
        if peak == 0.0:
            return 0.0
        m /= peak
        log_scale += np.log(peak)
        previous, estimate = estimate, float(np.exp(log_scale / power))
        if step >= 10 and abs(estimate - previous) <= tol * max(1.0, estimate):
            return estimate
        m = m @ m
        log_scale *= 2.0
        power *= 2.0
    raise NonConvergence(
        "spectral radius estimates failed to settle (power iteration and "
        "repeated squaring both exhausted)"
    )


def compute_R(phi, stability_check=True) -> np.ndarray:
    """R = (Id - Phi)^-1 by dense LU, gated on the spectral radius of |Phi|."""
    phi = np.asarray(phi, dtype=float)
    if phi.ndim != 2 or phi.shape[0] != phi.shape[1]:
        raise DimensionMismatch("phi must be square")
    if stability_check:
        rho = spectral_radius(phi)
        if rho >= 1.0:
            raise Unstable(f"spectral radius {rho:.6g} >= 1")
    n = phi.shape[0]
    m = np.eye(n) - phi
    with warnings.catch_warnings():
        # singularity is detected below via the pivot check
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, piv = lu_factor(m)
    if np.min(np.abs(np.diag(lu))) < 1e-14:
        raise Singular("Id - Phi is numerically singular")
    r = lu_solve((lu, piv), np.eye(n))
    residual = float(np.max(np.abs(r @ m - np.eye(n))))
    if residual > 1e-10:
        raise Singular(f"inversion residual {residual:.3g} exceeds 1e-10")
    return r


def mean_intensities(r, mu_bar) -> np.ndarray:
    """Mean event rates Lambda = R @ mu_bar."""
    r = np.asarray(r, dtype=float)
    mu_bar = np.asarray(mu_bar, dtype=float)
    if r.ndim != 2 or r.shape[0] != r.shape[1] or mu_bar.shape != (r.shape[0],):
        raise DimensionMismatch("need square r and a matching baseline vector")
    return r @ mu_bar


def recover_baselines(lam, phi) -> np.ndarray:
    """Average baselines mu_bar = (Id - Phi) @ Lambda from empirical rates.

    Negative entries are legal output (the identity Lambda = R mu_bar must be
    preserved); they are reported through NegativeBaselineWarning, not clamped.
    """
    lam = np.asarray(lam, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if phi.ndim != 2 or phi.shape[0] != phi.shape[1] or lam.shape != (phi.shape[0],):
        raise DimensionMismatch("need square phi and a matching rate vector")
    mu_bar = (np.eye(phi.shape[0]) - phi) @ lam
    negative = np.flatnonzero(mu_bar < 0)
    if negative.size:
        warnings.warn(
            f"recovered baseline negative for components {negative.tolist()}",
            NegativeBaselineWarning,
            stacklevel=2,
        )
    return mu_bar


def toy_model_R(phi_s, phi_c) -> np.ndarray:
    """Closed-form R for the fully symmetric two-component model."""
    den = (1.0 - phi_s) ** 2 - phi_c**2
    if den == 0.0:
        raise DegenerateDenominator(f"(1 - {phi_s})^2 equals {phi_c}^2")
    diag = (1.0 - phi_s) / den
    off = phi_c / den
    return np.array([[diag, off], [off, diag]])


def toy_model_sigma2(mu, phi_s, phi_c) -> float:
    """Asymptotic squared volatility of the symmetric up/down toy model."""
    if phi_s + phi_c >= 1.0:
        raise Unstable(f"phi_s + phi_c = {phi_s + phi_c} >= 1")
    return 2.0 * mu / ((1.0 - phi_s - phi_c) * (1.0 - phi_s + phi_c) ** 2)


def toy_model(mu, phi_s, phi_c, decay=1.0, agent="A") -> HawkesModel:
    """Two-component symmetric up/down model with a single exponential kernel."""
    basis = BasisDictionary(np.array([decay]))
    coeffs = np.array([[[phi_s], [phi_c]], [[phi_c], [phi_s]]])
    return HawkesModel(
        components=((agent, "P+"), (agent, "P-")),
        kernels=KernelMatrix(coeffs, basis),
        baseline=PiecewiseBaseline.constant([mu, mu], 0.0, 1.0),
        jumps=np.array([1.0, -1.0]),
    )


def summarize(model: HawkesModel) -> BranchingSummary:
    """Integrated branching summary of a stable model (Unstable otherwise)."""
    phi = integrate_kernels(model.kernels)
    rho = spectral_radius(phi)
    if rho >= 1.0:
        raise Unstable(f"spectral radius {rho:.6g} >= 1")
    r = compute_R(phi, stability_check=False)
    lam = mean_intensities(r, model.baseline.time_average())
    return BranchingSummary(phi=phi, r=r, lam=lam, rho_spec=rho)
