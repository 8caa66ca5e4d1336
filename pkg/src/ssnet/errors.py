"""Exception hierarchy shared by every stage of the pipeline.

The CLI maps the three families below onto exit codes: ``DataError`` -> 2,
``NumericError`` -> 3. Anything else that escapes is a bug.
"""


class SSNetError(Exception):
    """Base class for all errors raised by this package."""


class DataError(SSNetError):
    """Input data is malformed, inconsistent or incompatible."""


class NumericError(SSNetError):
    """A numeric computation produced unusable values."""


# signal io
class MalformedHeader(DataError):
    pass


class TruncatedData(DataError):
    pass


class CalibrationDegenerate(DataError):
    pass


class RangeOverflow(DataError):
    pass


class UnknownStageToken(DataError):
    pass


class OverlappingEntries(DataError):
    pass


class MissingChannel(DataError):
    pass


class MixedSampleRate(DataError):
    pass


# dataset pipeline
class EmptyOverlap(DataError):
    pass


class NonFiniteInput(DataError):
    pass


class TargetExceedsAvailable(DataError):
    pass


class NyquistViolation(DataError):
    pass


class ChecksumMismatch(DataError):
    pass


class SchemaVersionMismatch(DataError):
    pass


# autodiff / model
class ShapeMismatch(DataError):
    pass


class InputTooShort(DataError):
    pass


class DegenerateBatch(DataError):
    pass


class LabelOutOfRange(DataError):
    pass


class NonScalarRoot(SSNetError):
    pass


class InvalidConfig(DataError):
    pass


# trainer
class NonFiniteGradient(NumericError):
    pass


class EmptyDataset(DataError):
    pass


class DivergedLoss(NumericError):
    pass


# metrics
class LengthMismatch(DataError):
    pass


class ClassOutOfRange(DataError):
    pass


class EmptyCounts(DataError):
    pass


class NotFiveClass(DataError):
    pass
