"""Exception types shared across the package."""


class InputError(ValueError):
    """Rejected input: wrong shape, empty dataset, out-of-range argument."""


class NumericError(FloatingPointError):
    """A computation produced a non-finite value."""


class ConfigError(ValueError):
    """Inconsistent or unusable configuration."""


class DataError(ValueError):
    """Malformed file contents (checkpoint, dataset, config)."""
