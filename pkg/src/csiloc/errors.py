"""Exception taxonomy shared across the package.

The CLI maps these onto distinct exit codes (see cli.py): configuration
problems exit 2, data problems 3, training problems 4.
"""


class CsilocError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(CsilocError):
    """Invalid scenario/experiment configuration or unsupported option."""


class DataError(CsilocError):
    """Malformed, inconsistent, or missing input data."""


class ShapeError(CsilocError):
    """Tensor shape mismatch; message names the op and offending dims."""


class NumericsError(CsilocError):
    """NaN/Inf produced by a numeric operation."""


class TrainingError(CsilocError):
    """Optimization diverged or produced a non-finite loss."""


class UsageError(CsilocError):
    """An API was called out of contract (e.g. backward on non-scalar)."""
