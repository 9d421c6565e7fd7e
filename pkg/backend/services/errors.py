# backend/services/errors.py
import numpy as np


class ChannelEstimationError(Exception):
    """Base class for every failure raised by the estimation services"""


class DomainError(ChannelEstimationError, ValueError):
    """A physical or statistical quantity is outside its valid range"""


class ConfigurationError(ChannelEstimationError, ValueError):
    """A configuration cannot be realized (e.g. G does not divide N)"""


class DimensionError(ChannelEstimationError, ValueError):
    """Array shapes do not agree"""


class DegenerateSignalError(ChannelEstimationError):
    """The noiseless observation carries no energy, so an SNR cannot be met"""


class SingularSystemError(ChannelEstimationError, np.linalg.LinAlgError):
    """The E-step inner system could not be factorized, even with jitter"""


class OutputDirectoryError(ChannelEstimationError, OSError):
    """The sweep output directory cannot be written"""


def http_status(exc: ChannelEstimationError) -> int:
    """Status code used by the service for a failure"""
    if isinstance(exc, DegenerateSignalError):
        return 422
    if isinstance(exc, (DomainError, ConfigurationError, DimensionError)):
        return 400
    return 500
