"""Exception hierarchy shared across the package."""


class DiffEError(Exception):
    """Base class for all package errors."""


class DimensionError(DiffEError, ValueError):
    """An array has the wrong shape along some axis."""


class ConfigurationError(DiffEError, ValueError):
    """A hyperparameter or layer configuration is invalid."""


class UsageError(DiffEError, RuntimeError):
    """An API was called in a state where it cannot run."""


class TrainingError(DiffEError, RuntimeError):
    """Optimization hit a non-finite value."""


class DataError(DiffEError, ValueError):
    """Input data violates a structural requirement."""


class MetricError(DiffEError, ValueError):
    """A metric is undefined for the given inputs."""


class FormatError(DiffEError, ValueError):
    """A container file could not be decoded."""


class BadMagicError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass
