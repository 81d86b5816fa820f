"""Exception types raised across the package."""


class BincmaError(Exception):
    """Base class for all package errors."""


class ZeroProbability(BincmaError, ValueError):
    pass


class CanonicalOverflow(BincmaError, OverflowError):
    pass


class EmptySubset(BincmaError, ValueError):
    pass


class ZeroConditioningEvent(BincmaError, ValueError):
    pass


class InfeasibleMoments(BincmaError, ValueError):
    pass


class DimensionTooLarge(BincmaError, ValueError):
    pass


class OutOfSupport(BincmaError, ValueError):
    pass


class MeanOutOfRange(BincmaError, ValueError):
    pass


class DegenerateP(BincmaError, ValueError):
    pass


class VarianceTooLarge(BincmaError, ValueError):
    pass


class BadDimension(BincmaError, ValueError):
    pass


class NonFiniteFitness(BincmaError, ValueError):
    pass


class LengthMismatch(BincmaError, ValueError):
    pass


class ConfigInvalid(BincmaError, ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
