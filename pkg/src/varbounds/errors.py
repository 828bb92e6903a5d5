"""Exception types shared across the library."""

from __future__ import annotations


class VarBoundsError(Exception):
    """Base class for all library-specific errors."""


class NaturalSpaceError(VarBoundsError):
    """A parameter vector lies outside the natural parameter space.

    Carries the offending point so callers can report where the
    moment-generating function became infinite.
    """

    def __init__(self, point, context: str = ""):
        self.point = point
        self.context = context
        msg = f"parameter {point!r} outside the natural parameter space"
        if context:
            msg += f" ({context})"
        super().__init__(msg)


class ReferenceSupportError(VarBoundsError):
    """The reference density vanishes at an observation where it must not."""


class StencilError(VarBoundsError):
    """A finite-difference stencil hit a point with a non-finite value."""

    def __init__(self, point, value):
        self.point = point
        self.value = value
        super().__init__(f"non-finite value {value!r} at stencil point {point!r}")


class KernelEvaluationError(VarBoundsError):
    """Kernel evaluation produced a non-finite value (overflow or invalid pair)."""


class ConstraintRankError(VarBoundsError):
    """A constraint Jacobian is rank deficient, i.e. the constraints are redundant."""


class ConfigurationError(VarBoundsError):
    """A run configuration is invalid; the message names the offending field."""


class DataError(VarBoundsError):
    """Monte Carlo data contains non-finite values; the message lists offenders."""
