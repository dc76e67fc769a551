"""Exception types shared across the package.

Everything raised on purpose derives from SceneContrastError so callers
can catch one base class at the CLI boundary.
"""


class SceneContrastError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(SceneContrastError):
    """A config value, flag, or parameter combination is invalid."""


class ShapeError(SceneContrastError):
    """An array argument has the wrong shape, dtype, or size."""


class SceneFormatError(SceneContrastError):
    """A scene file is malformed.

    ``offset`` is the byte offset at which decoding failed and the message
    names the section being read.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class CheckpointFormatError(SceneContrastError):
    """A checkpoint file is malformed; carries the failing byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ContractViolationError(SceneContrastError):
    """An internal invariant was broken, e.g. a stale forward cache."""


class MissingClassError(SceneContrastError):
    """A class id required by a consumer is absent from a bank or table."""

    def __init__(self, message: str, class_id: int):
        super().__init__(message)
        self.class_id = class_id


class EmptyBankError(SceneContrastError):
    """No class survived the validity filters when building prototypes."""


class DegenerateBatchError(SceneContrastError):
    """A batch has no usable association pairs; the step must be skipped."""


class TrainingError(SceneContrastError):
    """Training cannot proceed (e.g. every batch of an epoch degenerate)."""
