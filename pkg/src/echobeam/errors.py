"""Exception types raised across the package."""


class EchobeamError(Exception):
    """Base class for all package errors."""


class ConfigurationError(EchobeamError, ValueError):
    """Invalid parameters, geometry or experiment configuration."""


class ShapeError(EchobeamError, ValueError):
    """Tensor or matrix dimensions do not agree."""


class FormatError(EchobeamError, ValueError):
    """A binary or JSON file does not match its format definition."""


class NumericalError(EchobeamError, ArithmeticError):
    """Non-finite values or invalid domains during computation."""
