"""Exception hierarchy shared by all solver modules."""

from __future__ import annotations


class EcmTumorError(Exception):
    """Base class for every error raised by the package."""


class InvalidParams(EcmTumorError, ValueError):
    """A parameter set violates positivity or range requirements."""


class NoSignChange(EcmTumorError):
    """The reaction term does not change sign on (0, E_cap]."""


class DegenerateDenominator(EcmTumorError):
    """The limit slope denominator ``g - f_x`` vanishes at the origin."""


class DenominatorVanished(EcmTumorError):
    """The running integral in the denominator crossed zero."""

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message)
        self.t = t


class BlowUp(EcmTumorError):
    """The solution left the admissible magnitude bound."""


class NonConvergent(EcmTumorError):
    """Step refinement did not reach the requested tolerance."""


class SeedFailure(EcmTumorError):
    """The boundary seed of a shooting integration is inconsistent."""


class StepFailure(EcmTumorError):
    """An implicit step failed to converge."""


class BracketFailure(EcmTumorError):
    """No radius bracket with opposite indicator values was found."""


class StepTooLarge(EcmTumorError):
    """A time-step matrix lost its monotonicity (off-diagonal sign)."""


class RadiusCollapse(EcmTumorError):
    """The free-boundary radius fell below the collapse threshold."""


class InvariantViolation(EcmTumorError, AssertionError):
    """A runtime invariant of the time-dependent solver failed."""
