"""Exception types shared across the package."""


class DataValidationError(ValueError):
    """Raised when an input file or dataset violates the documented format."""


class NumericalError(RuntimeError):
    """Raised when a computation produces NaN or infinite values."""
