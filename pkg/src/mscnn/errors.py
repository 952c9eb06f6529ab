"""Exception types shared across the package."""


class MscnnError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(MscnnError, ValueError):
    """An operand's dimensions do not match what the operation requires."""


class ContextError(MscnnError, ValueError):
    """Input sequence is too short for the temporal context an op consumes."""


class ConfigError(MscnnError, ValueError):
    """A configuration file or model description is invalid."""


class StaleCacheError(MscnnError, RuntimeError):
    """backward() was called without a preceding training-mode forward()."""


class TrainingError(MscnnError, RuntimeError):
    """Training aborted (e.g. non-finite loss)."""
