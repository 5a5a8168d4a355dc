"""Exception types shared across the package."""


class DomainError(ValueError):
    """Argument outside the domain of a mathematical operation."""


class ShapeError(ValueError):
    """Array dimensions are inconsistent with the architecture."""


class PreconditionError(ValueError):
    """A documented precondition of an operation does not hold."""


class CapacityError(RuntimeError):
    """Problem size exceeds what an exact solver is allowed to handle."""


class NumericalError(FloatingPointError):
    """Non-finite values appeared during a computation.

    ``state`` carries whatever was being updated when the failure occurred so
    callers can dump it for post-mortem inspection.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class ConfigError(ValueError):
    """Invalid experiment configuration."""
