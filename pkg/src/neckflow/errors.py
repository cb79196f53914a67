"""Exception hierarchy shared by all modules."""


class NeckflowError(Exception):
    """Base class; ``record()`` gives a JSON-friendly description."""

    def record(self):
        rec = {"error": type(self).__name__, "message": str(self)}
        for key in ("time", "condition", "T", "field", "line"):
            if getattr(self, key, None) is not None:
                rec[key] = getattr(self, key)
        return rec


class NonGraphical(NeckflowError):
    pass


class ChartExit(NonGraphical):
    pass


class InvalidTime(NeckflowError):
    pass


class TimeShiftTooLarge(InvalidTime):
    pass


class StepRejected(NeckflowError):
    def __init__(self, msg, time=None):
        super().__init__(msg)
        self.time = time


class QuadratureUnderresolved(NeckflowError):
    pass


class BallExceedsStrip(NeckflowError):
    pass


class InsufficientCoverage(NeckflowError):
    pass


class ZeroDistance(NeckflowError):
    pass


class TooShort(NeckflowError):
    pass


class LostGraphicality(NeckflowError):
    pass


class DegenerateFit(NeckflowError):
    pass


class HypothesisFailed(NeckflowError):
    def __init__(self, msg, condition=None, T=None):
        super().__init__(msg)
        self.condition = condition
        self.T = T


class NoSignChange(NeckflowError):
    pass


class MeanConvexityFailed(NeckflowError):
    pass


class MatchingFailed(NeckflowError):
    pass


class GridMismatch(NeckflowError):
    pass


class ParseError(NeckflowError):
    def __init__(self, msg, line=None, field=None):
        super().__init__(msg)
        self.line = line
        self.field = field


class ValidationError(NeckflowError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))

    def record(self):
        rec = super().record()
        rec["problems"] = self.problems
        return rec
