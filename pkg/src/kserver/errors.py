"""Exception hierarchy shared by all modules."""


class KServerError(Exception):
    """Base class for every error raised by the package."""


# trees and metrics
class InvalidTree(KServerError):
    pass


class InvalidMetric(KServerError):
    pass


class RatioViolation(KServerError):
    def __init__(self, u, v, msg=""):
        self.u, self.v = u, v
        super().__init__(msg or f"edge weight ratio violated between node {u} and child {v}")


class UnequalLeafDepth(KServerError):
    def __init__(self, a, b):
        self.a, self.b = a, b
        super().__init__(f"leaves {a} and {b} have different depths")


class UnknownLeaf(KServerError):
    pass


class SizeMismatch(KServerError):
    pass


# measures
class TreeMismatch(KServerError):
    pass


class MassMismatch(KServerError):
    pass


class InvalidMeasure(KServerError):
    pass


# anti-server polytope
class MassConditionError(KServerError):
    pass


class NotNear(KServerError):
    pass


# solver
class IterationBudgetExceeded(KServerError):
    pass


class Infeasible(KServerError):
    pass


class SolverFailure(KServerError):
    pass


# discretization
class GranularityTooSmall(KServerError):
    pass


class NonTermination(KServerError):
    pass


class TrackerInconsistency(KServerError):
    pass


# rounding
class NoCandidate(KServerError):
    pass


class ExchangeUnavailable(KServerError):
    pass


class NotAPath(KServerError):
    pass


# offline oracles and harness
class InstanceTooLarge(KServerError):
    pass


class InfeasibleTrace(KServerError):
    pass


class UnknownGenerator(KServerError):
    pass


class InvariantViolation(KServerError):
    pass
