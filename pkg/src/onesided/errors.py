"""Exception types raised across the package."""


class AddressingError(IndexError):
    """An interval id does not exist on the grid (or lacks required children)."""


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation."""


class PreconditionError(ValueError):
    """A documented precondition on the inputs was violated."""


class ResourceLimitError(RuntimeError):
    """Requested grid is too large for a dense/brute-force path."""


class ConvergenceError(RuntimeError):
    """Iterative method did not reach its tolerance."""

    def __init__(self, message, residual=None, estimate=None):
        super().__init__(message)
        self.residual = residual
        self.estimate = estimate


class ConfigError(ValueError):
    """Malformed experiment configuration."""
