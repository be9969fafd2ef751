"""Exception types shared across the package."""


class ConformalROError(Exception):
    """Base class for all package errors."""


class DomainError(ConformalROError, ValueError):
    """Argument outside the domain of a numerical function."""


class NotPositiveDefinite(ConformalROError):
    """Covariance estimate is singular or numerically degenerate."""


class InsufficientData(ConformalROError):
    """Too few observations for the requested estimate."""


class UnboundedRadius(ConformalROError):
    """Calibration fold too small for the requested alpha.

    Raised when the order-statistic index exceeds the number of
    calibration scores, so the region is all of R^d.
    """


class GridTooLarge(ConformalROError):
    """Candidate lattice exceeds the configured point budget."""


class DegenerateDirection(ConformalROError):
    """Objective direction is zero, so the worst case is undefined."""


class MalformedCsv(ConformalROError):
    """Input CSV does not match the expected layout."""


class NotConvergedWarning(UserWarning):
    """Iterative solver stopped at max_iter before reaching tolerance."""
