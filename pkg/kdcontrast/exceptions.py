"""Error hierarchy for kdcontrast.

ValidationError subclasses map to CLI exit status 1, ComputationError
subclasses to exit status 2. ZeroNormRow and DuplicateId raised while
loading a feature file carry exit status 2 on the instance.
"""

from typing import Any, Optional


class KdContrastError(Exception):
    """Base class for every error raised by kdcontrast"""

    exit_code = 2


class ValidationError(KdContrastError, ValueError):
    """Input rejected before or during validation"""

    exit_code = 1


class ComputationError(KdContrastError, RuntimeError):
    """Failure discovered while doing the work"""

    exit_code = 2


# numerics


class DimensionMismatch(ValidationError):
    pass


class ZeroNormVector(ValidationError):
    """A vector with zero norm was passed where a direction is required"""

    def __init__(self, message: str, index: Optional[int] = None, side: str = ""):
        super().__init__(message)
        self.index = index
        self.side = side


class EmptySequence(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class DegenerateInput(ValidationError):
    pass


# similarity


class BatchLengthMismatch(ValidationError):
    pass


class ThresholdOutOfRange(ValidationError):
    pass


class UnknownGoldIndex(ValidationError):
    def __init__(self, message: str, index: Any = None):
        super().__init__(message)
        self.index = index


# objectives


class EmptyBatch(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class MaskShapeMismatch(ShapeMismatch):
    pass


class MarginOutOfRange(ValidationError):
    pass


class DegenerateDenominator(ComputationError):
    pass


class NonFiniteLoss(ComputationError):
    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message)
        self.step = step


# encoder


class UnknownSentenceId(ValidationError):
    def __init__(self, message: str, sentence_id: Any = None):
        super().__init__(message)
        self.sentence_id = sentence_id


class MissingForwardState(ComputationError):
    pass


# teacher_store


class MalformedFile(ComputationError):
    def __init__(self, message: str, path: Any = None):
        super().__init__(message)
        self.path = path


class ZeroNormRow(ValidationError):
    def __init__(self, message: str, row: Optional[int] = None):
        super().__init__(message)
        self.row = row


class DuplicateId(ValidationError):
    def __init__(self, message: str, item_id: Any = None):
        super().__init__(message)
        self.item_id = item_id


class UnknownId(ValidationError):
    def __init__(self, message: str, item_id: Any = None):
        super().__init__(message)
        self.item_id = item_id


# trainer / eval / config


class InconsistentManifest(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class FewerThanTwoPoints(ValidationError):
    pass


class ConfigError(ValidationError):
    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key
