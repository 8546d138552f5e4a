"""Exception types raised across the simulator."""


class CovertSRLError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(CovertSRLError, ValueError):
    pass


class DegenerateInputError(CovertSRLError, ValueError):
    pass


class InvalidSymbolError(CovertSRLError, ValueError):
    pass


class InvalidInputError(CovertSRLError, ValueError):
    pass


class SyncFailureError(CovertSRLError):
    """Preamble correlation peak not distinguishable from the noise floor."""

    def __init__(self, message, ratio=None):
        super().__init__(message)
        self.ratio = ratio


class UnusablePilotError(CovertSRLError, ValueError):
    pass


class InsufficientCalibrationError(CovertSRLError, ValueError):
    pass


class PrecisionNotReachedError(CovertSRLError):
    """Numerical integration stopped before reaching the requested precision.

    The best available estimate is kept on the exception so callers can decide
    whether it is good enough.
    """

    def __init__(self, message, value=None, error=None):
        super().__init__(message)
        self.value = value
        self.error = error


class NumericFailureError(CovertSRLError, ArithmeticError):
    pass


class FitImpossibleError(CovertSRLError, ValueError):
    pass
