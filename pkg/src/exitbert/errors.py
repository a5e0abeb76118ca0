"""Exception hierarchy."""


class ExitBertError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(ExitBertError, ValueError):
    pass


class ContractError(ExitBertError, ValueError):
    """An operation was called with arguments violating its precondition."""


class ConfigError(ExitBertError, ValueError):
    pass


class DataError(ExitBertError, ValueError):
    pass


class DegenerateInputError(ExitBertError, ValueError):
    """Zero-norm vectors handed to a cosine computation."""


class DegenerateMetricError(ExitBertError, ValueError):
    """A metric is undefined for the given inputs (e.g. constant predictions)."""
