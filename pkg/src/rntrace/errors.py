"""Exception hierarchy shared by all modules."""


class RNError(Exception):
    """Base class for every error raised by rntrace."""


class NonPositiveMass(RNError, ValueError):
    pass


class DomainError(RNError, ValueError):
    pass


class NegativeDiscriminant(RNError, ValueError):
    pass


class HorizonPole(RNError, ZeroDivisionError):
    pass


class BranchUndefined(RNError, ValueError):
    pass


class NoRoot(RNError):
    pass


class AmbiguousRoot(RNError):
    def __init__(self, message, roots=()):
        super().__init__(message)
        self.roots = tuple(roots)


class StepFailure(RNError, RuntimeError):
    pass


class NonMonotoneTime(RNError, RuntimeError):
    pass


class InsufficientTail(RNError):
    pass


class GridTooCoarse(RNError):
    pass


class MissingCausticData(RNError):
    pass


class NonMonotoneMomentum(RNError):
    pass


class UnderResolved(RNError):
    pass


class NoStationaryPoint(RNError):
    pass


class DegenerateStationaryPoint(RNError):
    pass


class MatchFailure(RNError):
    pass


class OutOfChart(RNError, ValueError):
    pass


class FDInconsistent(RNError):
    pass


class BadData(RNError, ValueError):
    pass


class ConfigError(RNError, ValueError):
    pass
