"""Exception hierarchy shared by every module."""


class TrajherError(Exception):
    """Base class for all package errors."""


class ConfigurationError(TrajherError, ValueError):
    """Invalid shapes, ranges or configuration values."""


class NumericalError(TrajherError, ArithmeticError):
    """A NaN or infinity appeared where finite numbers are required."""


class InputError(TrajherError, ValueError):
    """Malformed caller-supplied data (actions, episodes, logs)."""


class StateError(TrajherError, RuntimeError):
    """Operation not valid in the current object state."""


class CheckpointError(TrajherError):
    """Checkpoint file is corrupt, of the wrong version, or mismatched."""
