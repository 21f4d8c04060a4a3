"""Exception types shared across the scheduler."""


class AsapError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(AsapError):
    """Invalid configuration value or malformed configuration file."""


class ConstructionError(ConfigError):
    """A requested synthetic-suite geometry cannot be realized."""


class DimensionError(AsapError):
    """Vector operands have mismatched lengths."""


class RewardDomainError(AsapError):
    """A reward ingredient (loss, gradient stat) is outside its domain,
    typically NaN/inf from a diverging training run."""


class CheckpointError(AsapError):
    """Checkpoint blob is malformed, truncated, or has an unknown version."""


class DivergenceError(AsapError):
    """A run aborted because the environment produced non-finite values."""

    def __init__(self, message: str, turn: int | None = None, arm: int | None = None):
        super().__init__(message)
        self.turn = turn
        self.arm = arm


class ProtocolError(AsapError):
    """Wire-protocol violation; carries the structured error code."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
