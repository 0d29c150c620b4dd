"""Exception types shared across the toolkit."""


class SvsepError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(SvsepError, ValueError):
    pass


class KindMismatchError(SvsepError, ValueError):
    """A complex spectrogram was expected but a magnitude one was given (or vice versa)."""


class SegmentOutOfRangeError(SvsepError, ValueError):
    pass


class ShapeError(SvsepError, ValueError):
    pass


class InfeasibleSplitError(SvsepError, ValueError):
    pass


class MissingGenreError(SvsepError, KeyError):
    pass


class MissingStemError(SvsepError, KeyError):
    pass


class MissingSourceError(SvsepError, KeyError):
    pass


class InvalidSpecError(SvsepError, ValueError):
    pass


class NumericError(SvsepError, FloatingPointError):
    """Non-finite value encountered; ``layer`` names where it appeared."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class DivergenceError(NumericError):
    pass


class AlignmentError(SvsepError):
    pass


class SilentTrackError(SvsepError):
    pass


class UndefinedMetricError(SvsepError, ValueError):
    pass
