"""Exception and warning types raised across the toolkit."""


class UavIdsError(Exception):
    """Base class for every error raised by this package."""


class IoFailure(UavIdsError):
    pass


class NoClassesFound(UavIdsError):
    pass


class SchemaConflict(UavIdsError):
    pass


class SchemaMismatch(UavIdsError):
    pass


class AllMissingColumn(UavIdsError):
    def __init__(self, column):
        super().__init__(f"column {column!r} has no non-missing cells")
        self.column = column


class InvalidSpec(UavIdsError):
    pass


class StratificationImpossible(UavIdsError):
    pass


class MissingClass(UavIdsError):
    pass


class EmptyNode(UavIdsError):
    pass


class InvalidError(UavIdsError):
    """Weak-learner error rate outside the open interval (0, 1)."""


class UnsupportedModelVersion(UavIdsError):
    pass


class DecodeError(UavIdsError):
    pass


class InvalidLabel(UavIdsError):
    pass


class InvalidProbabilities(UavIdsError):
    pass


class TooManyFeatures(UavIdsError):
    pass


class ModelLacksCover(UavIdsError):
    pass


class SurrogateFailed(UavIdsError):
    pass


class NothingLeft(UavIdsError):
    pass


class ConfigError(UavIdsError):
    pass


# -- warnings ---------------------------------------------------------------

class UnseenCategory(UserWarning):
    pass


class ZeroDivisionConvention(UserWarning):
    """A metric hit a zero denominator and fell back to its documented value."""


class DegenerateSample(UserWarning):
    pass


class SkippedClass(UserWarning):
    pass
