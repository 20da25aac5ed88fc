"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command-line front end:
2 for configuration problems, 3 for data problems, 4 for solver failures.
"""


class StochLemmaError(Exception):
    exit_code = 1


class ConfigError(StochLemmaError):
    exit_code = 2

    def __init__(self, message, fields=None):
        super().__init__(message)
        self.fields = list(fields or [])


class DataError(StochLemmaError):
    exit_code = 3


class DimensionMismatch(DataError):
    pass


class NotObservable(DataError):
    pass


class InitTooShort(DataError):
    pass


class TooShort(DataError):
    pass


class UnsupportedDistribution(DataError):
    pass


class IndexOutOfRange(DataError):
    pass


class BasisMismatch(DataError):
    pass


class NotPersistentlyExciting(DataError):
    pass


class RankDeficientData(DataError):
    pass


class RankDeficientSolve(DataError):
    pass


class InfeasibleInit(DataError):
    pass


class InfeasibleStack(DataError):
    pass


class CausalityViolation(DataError):
    pass


class InvalidBounds(DataError):
    pass


class SolverError(StochLemmaError):
    exit_code = 4


class Infeasible(SolverError):
    pass


class Unbounded(SolverError):
    pass


class MaxIterations(SolverError):
    pass


class NumericalBreakdown(SolverError):
    pass


class MaxIterationsExceeded(SolverError):
    """The stabilizing-feedback search ran out of iterations."""


class PlantUnbounded(SolverError):
    pass
