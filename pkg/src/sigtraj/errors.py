"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Raised when an argument violates a documented precondition."""


class CapacityError(RuntimeError):
    """Raised when a computation would exceed a configured size budget."""


class NumericError(RuntimeError):
    """Raised when a computation produces non-finite intermediate values."""
