"""Exception hierarchy.

Every error raised on purpose by the library derives from ``PopkitError`` so
callers (notably the CLI) can map failures onto exit codes.
"""


class PopkitError(Exception):
    """Base class for all library errors."""


class ConfigError(PopkitError, ValueError):
    """Invalid model, engine or run configuration."""


class SchemaError(PopkitError, ValueError):
    """State vector or selector does not match the schema."""


class StateError(PopkitError, ValueError):
    """State vector violates its invariants (negative, non-integral, overflow)."""


class DomainError(PopkitError, ValueError):
    """A rate or variance lies outside its admissible range."""


class DataError(PopkitError, ValueError):
    """Observation or covariate data missing or malformed."""


class UnsupportedError(PopkitError, NotImplementedError):
    """Operation not available for this process or rate form."""


class DegeneracyError(PopkitError, RuntimeError):
    """All particle weights vanished."""

    def __init__(self, message, year=None):
        super().__init__(message)
        self.year = year


class OracleInvalidError(PopkitError, RuntimeError):
    """Exact oracle lost more probability mass to truncation than allowed."""
