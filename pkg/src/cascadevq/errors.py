"""Error classes shared across the library."""


class CascadeError(Exception):
    """Base class for all library errors."""

    code = "error"


class ShapeError(CascadeError):
    """Dimension or length mismatch between arrays."""

    code = "shape-error"


class ConfigError(CascadeError):
    """Invalid configuration value."""

    code = "config-error"


class ContractError(CascadeError):
    """An operation was called outside its contract (e.g. backward on a
    non-scalar, a guidance hook returning unnormalized rows)."""

    code = "contract-error"


class NumericsError(CascadeError):
    """Non-finite values or underflow where finite values are required."""

    code = "numerics-error"
