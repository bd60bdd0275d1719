"""Exception hierarchy for the downlink power model."""

from typing import Mapping, Optional


class ModelError(Exception):
    """Base class for every error raised by the model."""


class InvalidParameterError(ModelError, ValueError):
    """A parameter or config field is outside its valid domain."""


class DegeneratePositionError(ModelError, ValueError):
    """The MS sits exactly on an interfering base station."""


class InvalidStateError(ModelError, ArithmeticError):
    """An interference sum came out non-positive."""


class NumericalDomainError(ModelError, ArithmeticError):
    """A quadrature kernel produced a non-finite value.

    `point` maps level index to the coordinate where it happened."""

    def __init__(self, message: str, point: Optional[Mapping[int, float]] = None):
        super().__init__(message)
        self.point = dict(point or {})


class NoCoverageError(ModelError):
    """The MS cannot camp on cell 1 under the given policy (P(Omega) = 0)."""


class InsufficientSamplesError(ModelError):
    """Too few Monte-Carlo samples landed in the requested connection mode."""
