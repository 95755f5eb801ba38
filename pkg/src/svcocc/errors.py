"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericalError -> 4.
"""


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


class DataError(ValueError):
    """Input data fails validation (dimensions, coding, missing columns)."""


class NumericalError(RuntimeError):
    """A numerical operation failed beyond recoverable safeguards."""


class ArchiveError(RuntimeError):
    """A posterior archive is missing, partial, or corrupt."""
