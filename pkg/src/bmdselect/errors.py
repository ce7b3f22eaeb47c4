"""Exception types raised by the estimation routines."""

from __future__ import annotations


class BmdError(Exception):
    """Base class for every error raised by this package."""


class DataError(BmdError, ValueError):
    """Malformed or inconsistent quantal-response data."""


class BmrUnattainable(BmdError):
    """The extra-risk curve never reaches the requested benchmark response."""


class DegenerateCurve(BmdError):
    """The dose-response curve is constant in dose, so no BMD exists."""


class FlatDoseResponseAtBmd(BmdError):
    """The curve has zero slope at the BMD; the gradient is undefined."""


class OutsideDesignRange(BmdError, ValueError):
    """A dose lies outside the span of the design doses."""


class ProjectionFailed(BmdError):
    """Kullback-Leibler projection did not converge."""


class SingularInformation(BmdError):
    """The information matrix at the projection is not invertible."""


class NoConvergedFits(BmdError):
    """Selection was requested but no fit converged."""


class NonConvergence(BmdError, RuntimeWarning):
    """Warning: no optimizer start met the convergence criterion."""


class SeparationDetected(BmdError, RuntimeWarning):
    """Warning: the logistic likelihood has no finite maximizer (separated data)."""
