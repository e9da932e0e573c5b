"""Exception types raised by the library."""


class LevyCSBPError(Exception):
    """Base class for library errors."""


class SolverError(LevyCSBPError):
    """Adaptive ODE step control could not reach the requested tolerance."""


class NonConvergenceError(LevyCSBPError):
    """An iterative limit (e.g. lambda -> infinity) did not stabilise."""


class InversionInstabilityError(LevyCSBPError):
    """Numerical Laplace inversion disagreed between precision levels."""


class UnsupportedFamilyError(LevyCSBPError):
    """No closed form is available for the requested process family."""


class IllConditionedFitError(LevyCSBPError):
    """Exponent-fit preconditions (span, points, precision) are not met."""


class ConfigError(LevyCSBPError):
    """Invalid experiment configuration."""


class HypothesisError(LevyCSBPError):
    """A hypothesis check required by the experiment failed."""

    def __init__(self, check: str, detail: str = ""):
        self.check = check
        super().__init__(f"hypothesis check failed: {check}" + (f" ({detail})" if detail else ""))


class ConfigMismatchError(LevyCSBPError):
    """Estimates from different configurations cannot be merged."""
