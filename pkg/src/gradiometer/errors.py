"""Exception hierarchy shared by all modules."""


class GradiometerError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(GradiometerError, ValueError):
    pass


class DomainError(GradiometerError, ValueError):
    pass


class TiltOutOfRange(DomainError):
    pass


# peak analysis
class NoConvergence(GradiometerError, RuntimeError):
    pass


class DegenerateWindow(GradiometerError, ValueError):
    pass


class MisalignedTraces(GradiometerError, ValueError):
    pass


class ZeroSignal(GradiometerError, ValueError):
    pass


# ellipse fitting
class TooFewPoints(GradiometerError, ValueError):
    pass


class DegenerateConic(GradiometerError, ValueError):
    pass


class NoMinimumInInterval(GradiometerError, ValueError):
    pass


# pipeline
class GroupTooSmall(GradiometerError, ValueError):
    pass


class NotConverged(GradiometerError, ValueError):
    pass


class NoPairs(GradiometerError, ValueError):
    pass


class SeriesTooShort(GradiometerError, ValueError):
    pass


class ConstantSeries(GradiometerError, ValueError):
    pass


class UnknownParameter(GradiometerError, KeyError):
    pass


class IllConditioned(GradiometerError, ValueError):
    pass
