"""
Exception hierarchy for the tracker.
Every error carries an exit code so the CLI can map failures to process status.
"""

from typing import Optional


class TrackerError(Exception):
    """Base class for all tracker errors"""
    exit_code = 1

    def __init__(self, message: str, path: Optional[str] = None):
        self.path = path
        super().__init__(f"{message} ({path})" if path else message)


class DataError(TrackerError):
    """Malformed, missing or unusable input data"""
    exit_code = 3


class NumericError(TrackerError):
    """A numerical precondition failed"""
    exit_code = 4


# data errors
class CorruptEpisode(DataError):
    pass


class CorruptCheckpoint(DataError):
    pass


class CorruptGrid(DataError):
    pass


class DataMissing(DataError):
    pass


class IoError(DataError):
    pass


class LengthMismatch(DataError):
    pass


class EmptyTemplate(DataError):
    pass


class NoCorrespondences(DataError):
    pass


# numeric errors
class NonPositiveDepth(NumericError):
    pass


class DegenerateConfiguration(NumericError):
    pass


class ShapeMismatch(NumericError):
    pass


class SpecMismatch(NumericError):
    pass


class OutOfBounds(NumericError):
    pass


class EmptyNegatives(NumericError):
    pass


class EmptyDictionary(NumericError):
    pass


class DegenerateFeatures(NumericError):
    pass


class TrackLost(NumericError):
    pass
