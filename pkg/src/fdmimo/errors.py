"""Exception types shared across the package."""


class FdmimoError(Exception):
    """Base class for all package errors."""


class InvalidConfigurationError(FdmimoError, ValueError):
    """A configuration value violates a structural constraint."""


class InvalidInputError(FdmimoError, ValueError):
    """An operation received malformed input (empty, wrong shape, ...)."""


class OutOfModelError(FdmimoError, ValueError):
    """Arguments fall outside the region where a model is valid."""


class SingularChannelError(FdmimoError, ArithmeticError):
    """Stacked channel is rank deficient; zero forcing is undefined."""

    def __init__(self, message, rank=None):
        super().__init__(message)
        self.rank = rank


class NumericalConditioningError(FdmimoError, ArithmeticError):
    """A covariance that must be positive definite is not."""


class CalibrationError(FdmimoError):
    """Calibration arithmetic failed (zero response, missing baseline)."""


class ZeroResponseError(CalibrationError, ZeroDivisionError):
    def __init__(self, chain):
        super().__init__(f"RF chain {chain} has a zero response")
        self.chain = chain


class NotInitializedError(CalibrationError):
    """Absolute calibration requested before a baseline was stored."""
