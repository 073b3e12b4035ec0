"""
Error hierarchy for the MDI-QKD simulator and analysis chain
"""
from typing import List, Optional


class QKDError(Exception):
    """Base class for every error raised by the mdiqkd package"""


class ConfigValidationError(QKDError, ValueError):
    """A protocol/channel/detector configuration violates its invariants"""

    def __init__(self, violations: List[str]):
        self.violations = list(violations)
        super().__init__("Invalid configuration: " + "; ".join(self.violations))


class DomainError(QKDError, ValueError):
    """An argument lies outside the domain of the operation"""


class TallyStructureError(QKDError, ValueError):
    """Tally or table shape mismatch, missing cells or negative counts"""


class DecoyBoundError(QKDError, ArithmeticError):
    """A decoy-state bound cannot be evaluated (zero denominator)"""


class LPSolverError(QKDError, RuntimeError):
    """The yield-bound linear program did not solve"""

    def __init__(self, message: str, status: Optional[int] = None):
        self.status = status
        super().__init__(message)


class LPInfeasibleError(LPSolverError):
    """The constraint set is infeasible, i.e. the input data are inconsistent"""


class BoundValidityError(QKDError, AssertionError):
    """An analytic bound is tighter than the LP oracle allows"""


class SessionMismatchError(QKDError, ValueError):
    """Views or keys do not belong to the same session, or are misaligned"""
