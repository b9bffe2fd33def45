"""Exception types raised across the package."""


class GiinError(Exception):
    pass


class DimensionError(GiinError, ValueError):
    """Operand shapes do not conform."""


class DomainError(GiinError, ValueError):
    """Argument outside the domain an operation is defined on."""


class ConfigError(GiinError, ValueError):
    pass


class SchemaError(GiinError, ValueError):
    pass


class FormatError(GiinError, ValueError):
    """A file on disk does not match the expected binary or text layout."""


class InvariantError(GiinError, RuntimeError):
    pass


class UndefinedMetricError(GiinError, ValueError):
    """Metric has no value for the given labels (e.g. AUC with one class)."""
