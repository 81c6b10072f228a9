"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid run configuration (bad file, unknown variant, bad value)."""


class AllPathsInvalidError(RuntimeError):
    """Every simulated path was flagged numerically invalid."""


class SingularSystemError(RuntimeError):
    """The multiplier system is numerically singular at this sample size."""
