"""Exception types raised across the package."""


class LgsError(Exception):
    """Base class for all package errors."""


class ShapeError(LgsError, ValueError):
    """Operands have incompatible shapes."""


class SingularMatrixError(LgsError, ArithmeticError):
    """A pivot vanished to working precision during a solve."""


class ExpmOverflowError(LgsError, OverflowError):
    """The matrix exponential would leave the float64 range."""


class NonFiniteError(LgsError, FloatingPointError):
    """A NaN or Inf showed up where finite values are required."""


class StaleTapeError(LgsError):
    """A forward tape was replayed against parameters it was not built from."""


class FormatError(LgsError):
    """A binary file did not match its declared layout.

    ``offset`` is the byte position where parsing stopped, if known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(LgsError, ValueError):
    """Invalid or unknown configuration values."""
