"""Exception hierarchy shared by all gcenter modules."""


class GCenterError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(GCenterError, ValueError):
    pass


class NegativeRate(ValidationError):
    pass


class NonFinite(ValidationError):
    pass


class NegativeTime(ValidationError):
    pass


class NonPositiveInput(ValidationError):
    pass


class NonPositiveDuration(ValidationError):
    pass


class InactiveEmitter(GCenterError):
    pass


class NoDecay(GCenterError):
    pass


class DegenerateNullspace(GCenterError):
    pass


class FactorOutOfRange(ValidationError):
    pass


class RatioOutOfRange(ValidationError):
    pass


class UnsortedInput(ValidationError):
    pass


class SingularNormalEquations(GCenterError):
    pass


class MaxIterations(GCenterError):
    pass


class PowerGridMismatch(ValidationError):
    pass


class NoCurvature(GCenterError):
    pass


class WindowOutOfRange(ValidationError):
    pass


class PeakCountInfeasible(GCenterError):
    pass


class TooFewValues(ValidationError):
    pass


class TooFewBins(ValidationError):
    pass


class NoGuidedMode(GCenterError):
    pass


class GridMismatch(ValidationError):
    pass


class NonConvergence(GCenterError):
    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class NoPeak(GCenterError):
    pass


class Unreachable(GCenterError):
    pass


class EmitterDeactivated(GCenterError):
    pass


class SchemaViolation(ValidationError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


class MissingFile(GCenterError, FileNotFoundError):
    pass


class UnknownReproduction(GCenterError, KeyError):
    def __str__(self):
        return Exception.__str__(self)
