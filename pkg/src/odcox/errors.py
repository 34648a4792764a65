"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes; library code raises them
directly.
"""


class OdcoxError(Exception):
    """Base class for all package errors."""


class ConfigError(OdcoxError):
    """Run configuration is missing, malformed, or fails schema checks."""


class MissingInputError(OdcoxError):
    """A referenced input file does not exist."""


class DataError(OdcoxError):
    """An input file parses but its contents are invalid (bad row, bad value)."""


class DimensionError(OdcoxError):
    """Model components and data disagree in shape (cells, columns, points)."""


class GeometryError(OdcoxError):
    """Degenerate region, point outside the grid, or bad cell membership."""


class FactorizationError(OdcoxError):
    """Cholesky factorization failed even at the largest jitter level."""


class SamplerError(OdcoxError):
    """An MCMC kernel hit an invalid target value or failed to terminate."""
