"""Exception and warning types shared across the package.

The CLI maps these onto stable exit codes (see ``cli``): input problems
exit 2, numerical failures exit 3. Library code raises the most specific
class that applies.
"""

from __future__ import annotations


class WeightedUError(Exception):
    """Base class for all package-specific errors."""


class InputError(WeightedUError, ValueError):
    """Malformed, inconsistent, or out-of-contract user input."""


class NumericalError(WeightedUError, RuntimeError):
    """A numeric routine failed or produced an unusable result."""


class MixtureAccuracyError(NumericalError):
    """The tail-probability integrator could not meet its error target.

    Carries the best available estimate so callers can decide whether to
    use it anyway (e.g. for diagnostics output).
    """

    def __init__(self, message: str, best_estimate: float, error_bound: float):
        super().__init__(message)
        self.best_estimate = float(best_estimate)
        self.error_bound = float(error_bound)


class DegenerateTestWarning(UserWarning):
    """The test was computable only in a degenerate sense (e.g. K = 0)."""
