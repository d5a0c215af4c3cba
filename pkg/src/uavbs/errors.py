"""Exception types shared across the package."""


class UavbsError(Exception):
    """Base class for all package errors."""


class MalformedRecord(UavbsError):
    pass


class TooShort(UavbsError):
    pass


class DegenerateReservoir(UavbsError):
    pass


class DimensionMismatch(UavbsError, ValueError):
    pass


class InsufficientData(UavbsError):
    pass


class SingularSystem(UavbsError):
    pass


class NotTrained(UavbsError):
    pass


class EmptySeries(UavbsError):
    pass


class TooFewPoints(UavbsError):
    pass


class EmptyCluster(UavbsError):
    pass


class LengthMismatch(UavbsError, ValueError):
    pass


class TooLarge(UavbsError):
    pass


class TrackExhausted(UavbsError):
    pass
