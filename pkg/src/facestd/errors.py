"""Exception and warning types raised across the package."""


class FacestdError(Exception):
    """Base class for package errors."""


class RangeError(FacestdError, ValueError):
    """A value fell outside its admissible range (translation, center, phantom bounds)."""


class SizeError(FacestdError, ValueError):
    """A volume is larger than the requested target size."""


class FitDegenerateError(FacestdError, ValueError):
    """Landmark configuration does not determine the plane triple."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConvergenceError(FacestdError, RuntimeError):
    """Iterative solver stopped without meeting its tolerance.

    ``best`` holds the best iterate found so callers can still use it.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class EstimatorError(FacestdError, RuntimeError):
    """A pose estimator failed during refinement."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class TranslationRangeWarning(UserWarning):
    """A composed translation left the normalized [-1, 1] box."""
