"""Exception hierarchy. Each family maps to a CLI exit code."""


class MoefError(Exception):
    exit_code = 1


class ConfigError(MoefError):
    exit_code = 2


class DataError(MoefError):
    exit_code = 3


class NumericError(MoefError):
    """A forward pass produced NaN or Inf."""

    exit_code = 4


class DimensionError(ConfigError, ValueError):
    pass


class ContractError(MoefError, ValueError):
    pass


class InsufficientHistoryError(DataError):
    pass


class SchemaError(ConfigError):
    pass


class UndefinedMetricError(MoefError, ValueError):
    pass


class IncompatibleCheckpointError(ConfigError):
    pass
