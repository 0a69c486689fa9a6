"""Exception hierarchy shared by every module."""


class SentinelError(Exception):
    """Base class for all errors raised by spectral_sentinel."""


class InvalidInputError(SentinelError, ValueError):
    """Input data is malformed (non-finite entries, asymmetric, indefinite...)."""


class InvalidArgumentError(SentinelError, ValueError):
    """An argument is out of its documented range or shapes do not agree."""


class DegenerateInputError(SentinelError, ValueError):
    """The quantity requested is undefined for this input (e.g. zero matrix)."""


class DegenerateStateError(SentinelError, RuntimeError):
    """A stateful object reached a state from which it cannot proceed."""


class CapacityError(SentinelError, ValueError):
    """Input exceeds the size an operation is contracted to handle."""


class NumericalError(SentinelError, ArithmeticError):
    """An iterative numerical kernel failed to converge."""


class ConfigurationError(SentinelError, ValueError):
    """A requested experiment configuration cannot be realized."""
