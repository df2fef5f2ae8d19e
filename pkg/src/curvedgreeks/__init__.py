"""Chart-aware Greeks, connection calibration and liquidity penalties for FX options."""

from .errors import (
    ChartMismatchError,
    ConditioningError,
    CurvedGreeksError,
    NotPositiveDefiniteError,
    PricingError,
    SingularDesignError,
    SingularJacobianError,
    ValidationError,
)
from .geometry import (
    FORWARD_VOL,
    LOG_FORWARD_VOL,
    SPOT_VOL,
    Chart,
    ChartMapAtPoint,
    Connection,
    Gradient,
    QuadraticForm,
    StatePoint,
    TangentMove,
    covariant_hessian,
    quadratic_predictor,
)
from .pricing import BarrierSpec, MarketSnapshot, SmilePillars, StraddleSpec, VanillaSpec

__version__ = "0.1.0"

__all__ = [
    "BarrierSpec",
    "Chart",
    "ChartMapAtPoint",
    "ChartMismatchError",
    "ConditioningError",
    "Connection",
    "CurvedGreeksError",
    "FORWARD_VOL",
    "Gradient",
    "LOG_FORWARD_VOL",
    "MarketSnapshot",
    "NotPositiveDefiniteError",
    "PricingError",
    "QuadraticForm",
    "SPOT_VOL",
    "SingularDesignError",
    "SingularJacobianError",
    "SmilePillars",
    "StatePoint",
    "StraddleSpec",
    "TangentMove",
    "ValidationError",
    "VanillaSpec",
    "covariant_hessian",
    "quadratic_predictor",
]
