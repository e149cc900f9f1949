"""Shared exception types."""


class SeqcoError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(SeqcoError, ValueError):
    """Operands have incompatible shapes."""


class NumericalError(SeqcoError, ArithmeticError):
    """A computation produced NaN/inf, or an update step had to abort."""


class ConfigError(SeqcoError, ValueError):
    """A configuration is invalid or inconsistent."""


class CheckpointError(SeqcoError, ValueError):
    """A checkpoint could not be loaded or does not match its context."""
