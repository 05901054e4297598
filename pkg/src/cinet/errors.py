"""Exception types shared across the package."""


class CinetError(Exception):
    """Base class for all package errors."""


class ConfigError(CinetError):
    """Invalid configuration value (bad hyperparameter, bad range, mode mismatch)."""


class DataError(CinetError):
    """Invalid input data (empty corpus, out-of-vocabulary token, empty eval set)."""


class ShapeError(CinetError):
    """Array dimensionality does not match what the model expects."""


class FormatError(CinetError):
    """A persisted file failed to parse or carries the wrong format version."""


class TrainingDiverged(CinetError):
    """Training aborted on a non-finite loss."""
