"""Exception types mapped to CLI exit codes."""

__all__ = ["ConfigError", "DataError", "NumericalError"]


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration (CLI exit code 2)."""


class DataError(ValueError):
    """Malformed or inconsistent input data (CLI exit code 3)."""


class NumericalError(RuntimeError):
    """Numerical failure such as a non-positive-definite matrix (CLI exit code 4)."""
