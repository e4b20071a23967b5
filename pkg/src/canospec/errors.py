"""Exception types shared across the package."""

__all__ = [
    "DomainError",
    "InputError",
    "PreconditionError",
    "DegenerateTailError",
    "UnsupportedOrderError",
    "NumericalError",
]


class DomainError(ValueError):
    """Argument outside the domain of a function or operator."""


class InputError(ValueError):
    """Malformed specification file or inline parameter string."""


class PreconditionError(RuntimeError):
    """A documented precondition of an operation does not hold."""


class DegenerateTailError(PreconditionError):
    """h1 carries no mass on a terminal subinterval, so tail-halving
    partition points are undefined beyond some depth."""


class UnsupportedOrderError(ValueError):
    """Growth-function order outside the supported range (needs order > 1)."""


class NumericalError(RuntimeError):
    """An iterative numerical procedure failed to converge."""
