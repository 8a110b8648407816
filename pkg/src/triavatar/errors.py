"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: ConfigError -> 2, NumericError -> 3,
OSError/IOError -> 4.
"""


class TriavatarError(Exception):
    """Base class for all package errors."""


class ConfigError(TriavatarError):
    """Invalid configuration, shape mismatch, or contract violation."""


class DimensionError(ConfigError):
    """Operands have incompatible shapes."""


class NumericError(TriavatarError):
    """NaN/Inf appeared in a computation, or a numeric budget was exceeded."""
