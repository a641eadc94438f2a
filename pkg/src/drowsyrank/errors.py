"""Exception hierarchy.

Every error raised on bad data or bad configuration derives from
:class:`DrowsyRankError` so that the command line can map it to exit code 1.
"""


class DrowsyRankError(Exception):
    """Base class for all package errors."""


class MalformedRow(DrowsyRankError):
    pass


class NonMonotoneTime(DrowsyRankError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


class EmptyTrip(DrowsyRankError):
    pass


class MissingFile(DrowsyRankError):
    pass


class DuplicateTripId(DrowsyRankError):
    pass


class UnknownLabelToken(DrowsyRankError):
    pass


class TripTooShort(DrowsyRankError):
    pass


class DimensionMismatch(DrowsyRankError, ValueError):
    pass


class EqualTimestamps(DrowsyRankError, ValueError):
    pass


class InsufficientData(DrowsyRankError, ValueError):
    """Too few samples to fit a model (e.g. an anomaly model without normal trips)."""


class NoValidPair(DrowsyRankError):
    pass


class SingleClassData(DrowsyRankError):
    pass


class SingleClassLabels(DrowsyRankError):
    pass


class MissingTimestampTruth(DrowsyRankError):
    pass


class KTooLarge(DrowsyRankError):
    pass


class ModelFormatError(DrowsyRankError):
    pass


class NotConverged(UserWarning):
    """Coordinate descent hit its sweep budget before reaching tolerance."""


class DegenerateData(UserWarning):
    """A channel has (near) zero residual variance; the variance floor was applied."""
