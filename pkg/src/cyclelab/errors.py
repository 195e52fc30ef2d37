"""Exception hierarchy shared by the solvers, the model and the tower."""
from __future__ import annotations


class CycleLabError(Exception):
    """Base class for every error raised by the package."""


class NoFixedPoint(CycleLabError):
    pass


class EveryPointFixed(CycleLabError):
    pass


class NoRoot(CycleLabError):
    pass


class Degenerate(CycleLabError):
    pass


class OutOfRegime(CycleLabError):
    pass


class SpecViolation(CycleLabError):
    """A model parameter set breaks one of its structural invariants."""


class NoBranch(CycleLabError):
    pass


class DegenerateWord(CycleLabError):
    pass


class ParentNotAnchored(CycleLabError):
    pass


class TowerRejected(CycleLabError):
    """A first orbit or tower configuration fails a required inequality."""


class Infeasible(CycleLabError):
    """No admissible (l, m) pair was found within the search bounds."""

    def __init__(self, message: str, ledger: dict | None = None):
        super().__init__(message)
        self.ledger = ledger or {}


class NonPositive(CycleLabError):
    pass


class BoundViolated(CycleLabError):
    pass


class DisjointnessFailed(CycleLabError):
    pass


class CountingShortfall(CycleLabError):
    pass


class NoSuchN(CycleLabError):
    def __init__(self, message: str, depth_estimate: int | None = None):
        super().__init__(message)
        self.depth_estimate = depth_estimate
