"""Exception types shared across the package."""


class B2PError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(B2PError, ValueError):
    """An argument or configuration value is outside its valid domain."""


class FormatError(B2PError, ValueError):
    """Input data (trace file, wire frame, config) is malformed."""


class DegenerateInputError(B2PError, ValueError):
    """Input carries no usable variation (constant signal, too few values)."""


class WindowUnderflowError(B2PError):
    """Not enough quantized bits around a change point to cut a key window."""
