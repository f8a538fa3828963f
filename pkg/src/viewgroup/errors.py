"""Exception hierarchy shared by every module.

The CLI reports failures by class name, so each class is named after the
condition it signals.
"""


class ViewGroupError(Exception):
    """Base class for all package errors."""


class ZeroNormVector(ViewGroupError, ValueError):
    def __init__(self, message: str = "vector norm below 1e-12", index: int | None = None):
        self.index = index
        if index is not None:
            message = f"{message} (index {index})"
        super().__init__(message)


class InvalidTemperature(ViewGroupError, ValueError):
    pass


class NotAPositivePair(ViewGroupError, ValueError):
    pass


class EmptyPositiveSet(ViewGroupError, ValueError):
    def __init__(self, message: str = "anchor has no positive view", index: int | None = None):
        self.index = index
        if index is not None:
            message = f"{message} (view {index})"
        super().__init__(message)


class EmptyNegativeSet(ViewGroupError, ValueError):
    pass


class ImageTooSmall(ViewGroupError, ValueError):
    pass


class InvalidN(ViewGroupError, ValueError):
    pass


class ShapeMismatch(ViewGroupError, ValueError):
    pass


class StaleCache(ViewGroupError, RuntimeError):
    pass


class EpochOutOfRange(ViewGroupError, ValueError):
    pass


class DatasetTooSmall(ViewGroupError, ValueError):
    pass


class NonFiniteLoss(ViewGroupError, FloatingPointError):
    pass


class CorruptCheckpoint(ViewGroupError, ValueError):
    pass


class VersionMismatch(ViewGroupError, ValueError):
    pass


class OutOfRange(ViewGroupError, ValueError):
    pass


class KTooLarge(ViewGroupError, ValueError):
    pass


class LabelMismatch(ViewGroupError, ValueError):
    pass


class IoFailure(ViewGroupError, OSError):
    pass


class ConfigError(ViewGroupError, ValueError):
    """Malformed or unknown configuration keys."""
