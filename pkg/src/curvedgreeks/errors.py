"""Exception types raised across the package."""


class CurvedGreeksError(Exception):
    """Base class for all package errors."""


class ChartMismatchError(CurvedGreeksError, ValueError):
    """Objects that must share a coordinate chart do not."""


class SingularJacobianError(CurvedGreeksError, ValueError):
    pass


class NotPositiveDefiniteError(CurvedGreeksError, ValueError):
    """A matrix that must be (semi)definite is not."""


class ConditioningError(CurvedGreeksError, ValueError):
    """A linear system is too ill-conditioned to solve reliably."""


class SingularDesignError(CurvedGreeksError, ValueError):
    pass


class ValidationError(CurvedGreeksError, ValueError):
    """Input data failed validation (bad row, bad parameter, ...)."""


class PricingError(CurvedGreeksError, ValueError):
    pass
