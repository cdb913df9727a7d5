"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ``FormatError`` and ``OSError`` give 2,
``NumericError`` gives 3, everything else derived from ``SSBAError`` gives 1.
"""


class SSBAError(Exception):
    """Base class for all package errors."""


class ConfigError(SSBAError, ValueError):
    """Invalid configuration value, unknown key or missing key."""


class ShapeError(SSBAError, ValueError):
    """Operand shapes are inconsistent."""


class NumericError(SSBAError, ArithmeticError):
    """Non-finite values, modulus underflow or training divergence."""


class FormatError(SSBAError):
    """A binary file does not follow its documented layout."""


class TruncatedFileError(FormatError):
    """A binary file ended before the expected payload was read."""

    def __init__(self, message: str, record_index: int | None = None):
        super().__init__(message)
        self.record_index = record_index
