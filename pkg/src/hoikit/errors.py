"""Exception types. Everything raised on bad input derives from ``HoikitError``."""


class HoikitError(Exception):
    """Base class; the CLI maps it to exit code 2."""


class EmptyPointSet(HoikitError, ValueError):
    pass


class PointBehindCamera(HoikitError, ValueError):
    pass


class DegenerateProjection(HoikitError, ValueError):
    pass


class OutOfRangeTime(HoikitError, ValueError):
    pass


class MalformedSkeleton(HoikitError, ValueError):
    pass


class DimensionMismatch(HoikitError, ValueError):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class PartitionMismatch(DimensionMismatch):
    pass


class EmptyPart(HoikitError, ValueError):
    pass


class NotScalarLoss(HoikitError, ValueError):
    pass


class NonFiniteValue(HoikitError, ArithmeticError):
    pass


class ImageTooSmall(HoikitError, ValueError):
    pass


class InvalidConfig(HoikitError, ValueError):
    pass


class InsufficientData(HoikitError, ValueError):
    pass


class DivergedLoss(HoikitError, ArithmeticError):
    """Loss went non-finite during a fit (CLI exit code 3)."""
