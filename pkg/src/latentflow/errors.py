"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 1,
DataError -> 2, NumericError -> 3.
"""


class LatentflowError(Exception):
    """Base class for package errors."""


class ConfigError(LatentflowError):
    """Bad configuration, bad usage, or inconsistent arguments."""


class ShapeError(ConfigError):
    """Dimension mismatch when assembling a computation."""


class DataError(LatentflowError):
    """Missing, corrupt, or inconsistent data files."""


class NumericError(LatentflowError):
    """Non-finite values or a numerical method breaking down."""


class SolverError(NumericError):
    """Pressure system has no valid solution (e.g. all outlets sealed)."""


class StabilityError(NumericError):
    """Explicit transport would need more substeps than the configured cap."""
