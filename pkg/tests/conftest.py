import numpy as np
import pytest

from flowvol.events import EventStream
from flowvol.model import (
    BasisDictionary,
    HawkesModel,
    KernelMatrix,
    PiecewiseBaseline,
)


@pytest.fixture
def toy_params():
    return {"mu": 0.5, "phi_s": 0.2, "phi_c": 0.3}


def poisson_model(rate=1.0, agent="A", horizon=1.0):
    """Two price components with independent constant-rate arrivals."""
    basis = BasisDictionary(np.array([1.0]))
    return HawkesModel(
        components=((agent, "P+"), (agent, "P-")),
        kernels=KernelMatrix.zeros(2, basis),
        baseline=PiecewiseBaseline.constant([rate, rate], 0.0, horizon),
        jumps=np.array([1.0, -1.0]),
    )


def stream_from_rows(rows, session, day=""):
    """rows: iterable of (t, agent, kind, delta)."""
    rows = list(rows)
    return EventStream(
        t=np.array([r[0] for r in rows], dtype=float),
        agent=np.array([r[1] for r in rows], dtype=object),
        kind=np.array([r[2] for r in rows], dtype=object),
        delta=np.array([r[3] for r in rows], dtype=float),
        session=session,
        day=day,
    )


def random_stable_summary(rng, n_max=24, rho_target=None):
    """Random nonnegative branching structure rescaled under the target radius."""
    from flowvol.model import BranchingSummary, compute_R, spectral_radius

    n = int(rng.integers(2, n_max + 1))
    phi = rng.random((n, n)) * (rng.random((n, n)) < 0.6)
    rho = spectral_radius(phi)
    target = rho_target if rho_target is not None else rng.uniform(0.1, 0.8)
    if rho > 0:
        phi *= target / rho
    mu = rng.uniform(0.05, 1.0, n)
    r = compute_R(phi)
    lam = r @ mu
    delta = np.zeros(n)
    price = rng.choice(n, size=2, replace=False)
    delta[price[0]] = 1.0
    delta[price[1]] = -1.0
    summary = BranchingSummary(phi=phi, r=r, lam=lam, rho_spec=spectral_radius(phi))
    return summary, mu, delta
