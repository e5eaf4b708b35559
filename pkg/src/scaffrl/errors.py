"""Exception types shared across the package."""


class ContractError(ValueError):
    """A caller violated a documented precondition."""


class ShapeError(ContractError):
    """Dimension mismatch; message carries expected vs actual sizes."""


class ConfigError(ValueError):
    """Invalid configuration value or unknown name."""


class TrainingError(RuntimeError):
    """Numerical failure during training (NaN loss or gradient)."""


class NotReadyError(Exception):
    """Retriable: the replay buffer cannot serve the request yet."""


class ProbeError(RuntimeError):
    """TD-error probe cannot run (missing target-side heads)."""


class CheckpointError(RuntimeError):
    """Corrupt, truncated, or incompatible checkpoint file."""
