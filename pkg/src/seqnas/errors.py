"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: ConfigError -> 1,
DataError -> 2, DivergenceError -> 3.
"""


class ConfigError(ValueError):
    """Invalid configuration: bad hyperparameter, group count, primitive list."""


class DataError(ValueError):
    """Malformed or insufficient input data: parse failures, bad tags, bad ids."""


class DivergenceError(RuntimeError):
    """Numeric divergence (NaN/Inf loss) during optimization."""
