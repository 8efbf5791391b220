"""Exception types, mapped to CLI exit codes by evflow.cli."""


class EvflowError(Exception):
    """Base class for all evflow errors."""


class ConfigError(EvflowError):
    """Invalid configuration or usage (CLI exit code 1)."""


class DataError(EvflowError):
    """Malformed, unsorted, out-of-bounds, or missing data (CLI exit code 2)."""


class NumericError(EvflowError):
    """Numerical failure, e.g. a plane with no time component (CLI exit code 3)."""
