"""Exception hierarchy shared across the package."""


class DrcateError(Exception):
    """Base class for all package errors."""


class ConfigError(DrcateError, ValueError):
    """An argument or configuration value is out of its valid range."""


class SchemaError(DrcateError, ValueError):
    """Input columns or matrix shapes do not match what was requested."""


class ParseError(DrcateError, ValueError):
    """A cell could not be parsed as a number."""


class DomainError(DrcateError, ValueError):
    """Input values violate a mathematical precondition (rank, range, ...)."""


class SingularDesignError(DomainError):
    """A regression design matrix is not of full column rank."""
