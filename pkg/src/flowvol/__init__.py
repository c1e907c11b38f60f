"""flowvol: multi-agent Hawkes models for order-flow volatility attribution."""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    EVENT_TYPES,
    PRICE_TYPES,
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
    summarize,
    toy_model,
    toy_model_R,
    toy_model_sigma2,
)
from .events import EventStream  # noqa: F401
from .simulate import (  # noqa: F401
    PricePath,
    build_price_path,
    realized_variance,
    simulate_cluster,
    simulate_thinning,
)
