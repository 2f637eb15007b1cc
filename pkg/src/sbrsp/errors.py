"""Exception hierarchy shared across the package.

Every domain failure maps to one of these so the CLI can emit a structured
error report with a stable ``code`` field.
"""

from __future__ import annotations


class SbrspError(Exception):
    """Base class for all domain errors."""

    code = "error"

    def payload(self) -> dict:
        return {"code": self.code, "message": str(self)}


class InstanceValidationError(SbrspError):
    """An instance file or in-memory instance violates an invariant."""

    code = "invalid-instance"

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field

    def payload(self) -> dict:
        out = super().payload()
        if self.field:
            out["field"] = self.field
        return out


class StrandedStudentError(InstanceValidationError):
    """A student has no candidate stop within the maximum walking distance."""

    code = "stranded-student"

    def __init__(self, message: str, student_id: str, bus_id: str | None = None):
        super().__init__(message, field=f"students[{student_id}]")
        self.student_id = student_id
        self.bus_id = bus_id

    def payload(self) -> dict:
        out = super().payload()
        out["student"] = self.student_id
        if self.bus_id is not None:
            out["bus"] = self.bus_id
        return out


class GenerationError(SbrspError):
    """The synthetic generator was given an unsatisfiable configuration."""

    code = "generation"


class DisconnectedError(SbrspError):
    """A shortest-path query has no route between its endpoints."""

    code = "disconnected"


class SolverBackendError(SbrspError):
    """A MILP backend failed in a way that is not a model status."""

    code = "solver-backend"


class ModelInfeasibleError(SbrspError):
    """A model is infeasible (distinct from a solver time-out)."""

    code = "infeasible"


class SolveTimeoutError(SbrspError):
    """The solver hit its time limit without producing an incumbent."""

    code = "timeout-no-solution"

    def __init__(self, message: str, best_bound: float | None = None):
        super().__init__(message)
        self.best_bound = best_bound


class CapacityError(SbrspError):
    """Fleet capacity cannot cover the students to partition."""

    code = "capacity"


class LiftError(SbrspError):
    """A reduced routing solution could not be lifted to the full model."""

    code = "lift"


class CalibrationError(SbrspError):
    """The mode-choice target is not reachable for any coefficient value."""

    code = "calibration"

    def __init__(self, message: str, achievable: tuple[float, float] | None = None):
        super().__init__(message)
        self.achievable = achievable

    def payload(self) -> dict:
        out = super().payload()
        if self.achievable is not None:
            out["achievable"] = list(self.achievable)
        return out
