"""Exception hierarchy shared across the solver and the pipeline."""


class EMOTError(Exception):
    """Base class for all errors raised by this package."""


class InfeasibleError(EMOTError):
    """The instance admits no martingale coupling (or no finite h root)."""


class InfeasibleSupport(InfeasibleError):
    """The y-support does not strictly straddle the x-support."""


class MeanMismatch(InfeasibleError):
    """The two marginals have different means."""


class DegenerateNu(InfeasibleError):
    """The target marginal is a point mass."""


class NotAbsolutelyContinuous(EMOTError):
    """A plan puts mass where the reference measure has none."""


class SolverAbort(EMOTError):
    """Raised when the outer iteration cannot continue.

    ``trace`` carries whatever was recorded before the abort.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class Overflow(SolverAbort):
    """An exponent exceeded the overflow guard."""


class BracketFailure(SolverAbort):
    """The root bracket search ran past its limit without a sign change."""

    def __init__(self, message, row=None, trace=None):
        super().__init__(message, trace=trace)
        self.row = row


class InsufficientTrace(EMOTError):
    """Too few recorded points to fit a convergence rate."""


class NoConvergence(EMOTError):
    """The oracle ascent hit its iteration cap."""


class DegenerateHistogram(EMOTError):
    """A histogram axis has fewer than two populated cells."""


class NonConvexPrices(EMOTError):
    """Call prices have a negative butterfly (second difference)."""


class FellerViolation(ValueError, EMOTError):
    """Heston parameters fail 2 * lambda * v_bar / eta**2 > 1."""


class MassOutsideGridWarning(UserWarning):
    """More than the allowed fraction of samples fell outside the grid."""


class ConvexOrderWarning(UserWarning):
    """The marginals violate convex order beyond tolerance."""
