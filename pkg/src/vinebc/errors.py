"""Exception types shared across the package."""


class VinebcError(Exception):
    """Base class for all package-specific errors."""


class SchemaError(VinebcError):
    """Input table does not match the declared variable schema."""


class TableFormatError(VinebcError):
    """A table cell or row ordering could not be parsed/validated."""


class EstimationError(VinebcError):
    """A marginal, pair copula or vine could not be estimated."""


class DomainError(VinebcError):
    """An evaluation was requested outside the valid domain."""


class NumericsError(VinebcError):
    """A numerical routine failed to converge or lost monotonicity."""


class ConfigError(VinebcError):
    """A run configuration file is missing or inconsistent."""
