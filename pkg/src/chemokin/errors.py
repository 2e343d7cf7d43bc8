"""Exception types shared across the package."""


class ChemokinError(Exception):
    """Base class for all package errors."""


class BadConfig(ChemokinError):
    """Unknown key/family or unparsable/non-positive parameter."""


class AssumptionViolation(ChemokinError):
    """A model assumption failed a construction-time sweep.

    The message names the failed inequality and the offending grid point.
    """


class NonFiniteInput(ChemokinError):
    """An input array contains NaN or infinity."""


class CflViolation(ChemokinError):
    """A time step exceeds the positivity bound of a sub-operation."""


class SpecViolation(ChemokinError):
    """The model/grid combination breaks a runtime requirement
    (e.g. the adaptation rate is non-negative at the m truncation)."""


class PositivityError(ChemokinError):
    """A scheme produced a negative cell; a hard failure, never clipped."""


class LeftDomain(ChemokinError):
    """A backtraced internal-state path exited [0, m_max]."""


class NoContraction(ChemokinError):
    """The fixed-point iteration horizon is too long to contract."""


class NoSignChange(ChemokinError):
    """Root bracketing failed: the adaptation rate does not change sign."""


class EmptyField(ChemokinError):
    """An operation that needs positive mass received a vacuum field."""
