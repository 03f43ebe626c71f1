"""Exception hierarchy shared across the package."""


class DMTrackError(Exception):
    """Base class for all package errors."""


class ShapeError(DMTrackError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(DMTrackError, ValueError):
    """An input lies outside the domain of a function (e.g. log of a non-positive value)."""


class NumericalError(DMTrackError, ArithmeticError):
    """A computation produced or received non-finite or ill-conditioned values."""


class GradientError(DMTrackError, RuntimeError):
    """Misuse of the gradient tape (double backward, missing tape, ...)."""


class InvalidMeasurementError(DMTrackError, ValueError):
    """A box measurement has non-positive extent."""


class SequencingError(DMTrackError, ValueError):
    """Frames were fed to the tracker out of order."""


class DataError(DMTrackError, ValueError):
    """A data file is malformed or missing."""


class ConfigError(DMTrackError, ValueError):
    """A configuration key or value is invalid."""


class UndefinedMetricError(DMTrackError, ValueError):
    """A metric's denominator is zero (e.g. MOTA without ground-truth boxes)."""
