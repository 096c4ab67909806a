"""Exception types raised across the package."""


class ConfigurationError(ValueError):
    """Invalid configuration value or combination."""


class ShapeError(ValueError):
    """Array shape incompatible with the requested operation."""


class DegenerateInputError(ValueError):
    """Input carries no usable signal (e.g. an all-air volume)."""


class SamplerError(ValueError):
    """A patch cannot be drawn from the given sample."""


class UndefinedMetricError(ValueError):
    """Metric is undefined for the given labels (e.g. a single class)."""


class StageError(RuntimeError):
    """Model is in the wrong stage mode for the requested operation."""


class TrainingError(RuntimeError):
    """Training cannot proceed with the given data."""


class NumericalError(TrainingError):
    """Non-finite loss or parameters encountered during training."""
