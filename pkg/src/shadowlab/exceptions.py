"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Raised when an argument violates a documented precondition."""


class NumericalDivergenceError(ArithmeticError):
    """Raised when an iterative computation produces a non-finite value.

    Attributes
    ----------
    step : int or None
        Index of the step at which the divergence was detected.
    """

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class DatasetIOError(OSError):
    """Raised when an image or manifest file cannot be read or written."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path
