"""Motion-only multi-object tracking: Kalman filtering fused with a learned
deformable selective-scan predictor, plus training, synthetic data and
CLEAR-MOT evaluation."""

from .errors import (
    ConfigError,
    DataError,
    DMTrackError,
    DomainError,
    GradientError,
    InvalidMeasurementError,
    NumericalError,
    SequencingError,
    ShapeError,
    UndefinedMetricError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DMTrackError", "DataError", "DomainError", "GradientError",
    "InvalidMeasurementError", "NumericalError", "SequencingError", "ShapeError",
    "UndefinedMetricError", "__version__",
]
