"""Exception types raised across the package."""


class GenHopError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatchError(GenHopError, ValueError):
    """Array shape is incompatible with the requested operation."""


class InsufficientSamplesError(GenHopError, ValueError):
    """Too few samples to fit the requested statistic."""


class DegenerateDataError(GenHopError, ValueError):
    """Training data carries no usable variance."""


class ModelFormatError(GenHopError, ValueError):
    """Model container is unreadable."""


class ChecksumError(ModelFormatError):
    """Model container failed integrity verification."""


class VersionError(ModelFormatError):
    """Model container was written with an unsupported format version."""
