"""Exception types shared across the package."""


class MintimeError(Exception):
    """Base class for all package errors."""


class ConfigError(MintimeError):
    """A vehicle or solver configuration is physically or numerically invalid."""


class DimensionError(MintimeError):
    """An array or decision vector does not match the expected layout."""


class ValidationError(MintimeError):
    """A track or input file violates its invariants."""


class ParseError(MintimeError):
    """A track or config file could not be parsed."""


class SolveError(MintimeError):
    """A solve that later steps depend on did not converge."""
