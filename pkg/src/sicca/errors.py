"""Exception hierarchy.

Numeric failures derive from :class:`NumericError` so the CLI can map them
to exit code 3; configuration problems derive from :class:`ConfigError`
(exit code 2).
"""


class SiccaError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(SiccaError, ValueError):
    """Malformed configuration, model file or command-line input."""


class NumericError(SiccaError, ArithmeticError):
    """A numerical precondition failed at runtime."""


class DimensionError(NumericError):
    pass


class InsufficientSamples(NumericError):
    pass


class SingularCovariance(NumericError):
    pass


class DegenerateDirection(NumericError):
    pass


class GapTooSmall(NumericError):
    pass


class InvalidModel(NumericError):
    pass


class InvalidShift(NumericError):
    pass


class BracketFailure(NumericError):
    pass


class MaxOuterExceeded(NumericError):
    pass


class StreamExhausted(NumericError):
    pass


class FitError(NumericError):
    pass


class MaxEpochsExceeded(RuntimeWarning):
    """Warning category: an SVRG solve hit its epoch budget uncertified."""
