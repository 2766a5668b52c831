"""Exception types shared across the package."""


class LoocusumError(Exception):
    """Base class for package-specific errors."""


class InsufficientSamplesError(LoocusumError, ValueError):
    """An operation needs more samples than the window provides."""


class DegenerateWindowError(LoocusumError, ValueError):
    """The adaptive bandwidth rule is undefined for fewer than two samples."""


class QuadratureError(LoocusumError, RuntimeError):
    """Numeric quadrature did not converge; carries a grid report."""

    def __init__(self, message: str, grid_report: dict | None = None) -> None:
        super().__init__(message)
        self.grid_report = grid_report or {}


class RateViolationError(LoocusumError, RuntimeError):
    """A diagnostic series that must decay with sample size does not."""

    def __init__(self, message: str, series=None) -> None:
        super().__init__(message)
        self.series = list(series) if series is not None else []


class DelayUnreliableError(LoocusumError, RuntimeError):
    """Too many censored trials for a trustworthy delay estimate."""
