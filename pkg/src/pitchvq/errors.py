"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes, so raising the right subclass
matters more than the message format.
"""


class PitchVQError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PitchVQError):
    """Invalid, inconsistent, or mismatched configuration."""


class DataError(PitchVQError):
    """Corpus, file-format, or input-validation failure."""


class ShapeError(PitchVQError):
    """Tensor or layer shape mismatch; message names the offending dimension."""


class NumericError(PitchVQError):
    """Non-finite values where finite ones are required (NaN/Inf guard)."""
