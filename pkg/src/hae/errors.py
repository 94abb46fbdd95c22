"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericError -> 3.
"""


class HaeError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(HaeError):
    """Invalid configuration, arguments, or model/layer wiring."""


class DataError(HaeError):
    """Malformed or inconsistent input data (files, graphs, labels)."""


class NumericError(HaeError):
    """Numeric failure: overflow, non-finite loss, degenerate normalization."""
