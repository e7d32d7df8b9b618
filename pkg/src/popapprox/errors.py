"""Exception hierarchy for popapprox."""


class PopApproxError(Exception):
    """Base class for all library errors."""


class ConfigError(PopApproxError, ValueError):
    """Invalid model or sweep configuration."""


class NoRoot(PopApproxError):
    """The drift does not change sign over the search bracket."""


class NonAttracting(PopApproxError):
    """The root of the drift has a nonnegative derivative."""


class DegenerateVariance(PopApproxError):
    """The quadratic variation vanishes at the equilibrium point."""


class WindowTooSmall(PopApproxError, ValueError):
    """The truncation window cannot hold the largest jump."""


class SolverError(PopApproxError):
    """Base class for linear algebra failures."""


class SingularSystem(SolverError):
    pass


class NotConverged(SolverError):
    pass


class SteinOverflow(PopApproxError, OverflowError):
    """The Stein solution could not be evaluated in floating point."""


class ZeroRate(PopApproxError):
    """A realized jump had zero rate at the pre-jump state."""


class TooFewPoints(PopApproxError, ValueError):
    pass


class NonpositiveValue(PopApproxError, ValueError):
    pass


class InvariantViolation(PopApproxError):
    """A checked numerical invariant failed."""
