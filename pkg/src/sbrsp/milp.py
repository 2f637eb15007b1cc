"""Solver-agnostic mixed-integer linear optimization layer.

A model is a plain description (variables, linear constraints, linear
objective, optional warm start). Backends turn it into a solution; the
default backend drives HiGHS through scipy. ``solve`` wraps any backend
with warm-start semantics: a warm start that checks out as feasible acts
as an incumbent, so the reported solution is never worse than it.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from enum import Enum
from typing import Protocol, Sequence

import numpy as np
from scipy.optimize import Bounds, LinearConstraint
from scipy.optimize import milp as _scipy_milp
from scipy.sparse import csr_matrix

from .errors import SolverBackendError

BINARY = "binary"
CONTINUOUS = "continuous"


class SolveStatus(Enum):
    OPTIMAL = "optimal"
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    TIME_LIMIT_NO_SOLUTION = "time_limit_no_solution"

    @property
    def has_solution(self) -> bool:
        return self in (SolveStatus.OPTIMAL, SolveStatus.FEASIBLE)


@dataclass
class Variable:
    name: str
    kind: str = CONTINUOUS
    lb: float = 0.0
    ub: float = math.inf


@dataclass
class Constraint:
    name: str
    terms: list[tuple[int, float]]  # (variable index, coefficient)
    sense: str  # "<=", ">=", "=="
    rhs: float


@dataclass
class Violation:
    constraint: str
    amount: float
    detail: str = ""


@dataclass
class SolveOptions:
    time_limit_s: float = 60.0
    mip_gap: float = 1e-4
    seed: int = 0
    threads: int | None = None

    def __post_init__(self):
        if not self.time_limit_s > 0:
            raise ValueError("time limit must be positive")


@dataclass
class MiloSolution:
    status: SolveStatus
    objective: float | None
    values: dict[str, float] | None
    best_bound: float | None = None
    wall_time_s: float = 0.0
    from_warm_start: bool = False

    def __post_init__(self):
        if self.status.has_solution and self.values is None:
            raise ValueError(f"status {self.status} requires a value map")
        if not self.status.has_solution and self.values is not None:
            raise ValueError(f"status {self.status} must not carry values")

    def value(self, name: str) -> float:
        assert self.values is not None
        return self.values.get(name, 0.0)


class MiloModel:
    """Ordered, named variables and constraints with a minimize objective."""

    def __init__(self, name: str = "model"):
        self.name = name
        self.variables: list[Variable] = []
        self.constraints: list[Constraint] = []
        self.objective: dict[int, float] = {}
        self.objective_constant: float = 0.0
        self.warm_start: dict[str, float] | None = None
        self._var_index: dict[str, int] = {}
        self._con_names: set[str] = set()

    # -- building ---------------------------------------------------------

    def add_var(self, name: str, kind: str = CONTINUOUS, lb: float = 0.0, ub: float = math.inf) -> str:
        if name in self._var_index:
            raise ValueError(f"duplicate variable {name!r}")
        if kind == BINARY:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        self._var_index[name] = len(self.variables)
        self.variables.append(Variable(name, kind, lb, ub))
        return name

    def fix_var(self, name: str, value: float) -> None:
        v = self.variables[self._var_index[name]]
        v.lb = v.ub = value

    def has_var(self, name: str) -> bool:
        return name in self._var_index

    def var_index(self, name: str) -> int:
        return self._var_index[name]

    def add_constraint(self, name: str, terms: Sequence[tuple[str, float]], sense: str, rhs: float) -> None:
        if sense not in ("<=", ">=", "=="):
            raise ValueError(f"bad sense {sense!r}")
        if name in self._con_names:
            raise ValueError(f"duplicate constraint {name!r}")
        self._con_names.add(name)
        idx_terms = [(self._var_index[v], float(c)) for v, c in terms if c != 0.0]
        self.constraints.append(Constraint(name, idx_terms, sense, float(rhs)))

    def set_objective(self, terms: Sequence[tuple[str, float]], constant: float = 0.0) -> None:
        self.objective = {}
        for v, c in terms:
            if c != 0.0:
                i = self._var_index[v]
                self.objective[i] = self.objective.get(i, 0.0) + float(c)
        self.objective_constant = float(constant)

    def set_warm_start(self, values: dict[str, float]) -> None:
        self.warm_start = dict(values)

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    # -- evaluation ---------------------------------------------------------

    def objective_value(self, values: dict[str, float]) -> float:
        total = self.objective_constant
        for i, c in self.objective.items():
            total += c * values.get(self.variables[i].name, 0.0)
        return total

    def check(self, values: dict[str, float], tol: float = 1e-6) -> list[Violation]:
        """Evaluate every constraint, bound and integrality requirement.

        Missing names count as zero, so sparse value maps (only the
        nonzero variables) validate directly.
        """
        out: list[Violation] = []
        vals = np.zeros(len(self.variables))
        for name, v in values.items():
            idx = self._var_index.get(name)
            if idx is not None:
                vals[idx] = v
        for i, var in enumerate(self.variables):
            x = vals[i]
            if x < var.lb - tol or x > var.ub + tol:
                out.append(Violation(f"bound[{var.name}]", max(var.lb - x, x - var.ub), f"{x} outside [{var.lb}, {var.ub}]"))
            if var.kind == BINARY and abs(x - round(x)) > tol:
                out.append(Violation(f"integrality[{var.name}]", abs(x - round(x)), f"{x} not integral"))
        for con in self.constraints:
            lhs = sum(c * vals[i] for i, c in con.terms)
            if con.sense == "<=":
                gap = lhs - con.rhs
            elif con.sense == ">=":
                gap = con.rhs - lhs
            else:
                gap = abs(lhs - con.rhs)
            if gap > tol:
                out.append(Violation(con.name, gap, f"lhs={lhs:.9g} {con.sense} rhs={con.rhs:.9g}"))
        return out

    # -- export ----------------------------------------------------------------

    def to_lp(self) -> str:
        """LP-format text of the model (objective constant omitted)."""

        def term_str(idx: int, coef: float) -> str:
            sign = "+" if coef >= 0 else "-"
            return f"{sign} {abs(coef):.12g} x{idx}"

        lines = [f"\\ {self.name}", "Minimize", " obj:"]
        obj_terms = [term_str(i, c) for i, c in sorted(self.objective.items())]
        lines.append("   " + (" ".join(obj_terms) if obj_terms else "0 x0"))
        lines.append("Subject To")
        for k, con in enumerate(self.constraints):
            body = " ".join(term_str(i, c) for i, c in con.terms) or "0 x0"
            op = {"<=": "<=", ">=": ">=", "==": "="}[con.sense]
            lines.append(f" c{k}: {body} {op} {con.rhs:.12g}")
        lines.append("Bounds")
        for i, v in enumerate(self.variables):
            lo = f"{v.lb:.12g}" if math.isfinite(v.lb) else "-inf"
            hi = f"{v.ub:.12g}" if math.isfinite(v.ub) else "+inf"
            lines.append(f" {lo} <= x{i} <= {hi}")
        binaries = [f"x{i}" for i, v in enumerate(self.variables) if v.kind == BINARY]
        if binaries:
            lines.append("Binary")
            lines.append(" " + " ".join(binaries))
        lines.append("End")
        # Variable name key as trailing comments for traceability.
        lines.append("\\ name map:")
        for i, v in enumerate(self.variables):
            lines.append(f"\\ x{i} = {v.name}")
        return "\n".join(lines) + "\n"


class SolverBackend(Protocol):
    name: str

    def solve(self, model: MiloModel, options: SolveOptions) -> MiloSolution: ...


class HighsBackend:
    """HiGHS branch-and-bound via scipy.optimize.milp."""

    name = "highs"

    def solve(self, model: MiloModel, options: SolveOptions) -> MiloSolution:
        n = model.n_vars
        c = np.zeros(n)
        for i, coef in model.objective.items():
            c[i] = coef
        integrality = np.array([1 if v.kind == BINARY else 0 for v in model.variables])
        lb = np.array([v.lb for v in model.variables])
        ub = np.array([v.ub for v in model.variables])
        constraints = []
        if model.constraints:
            rows, cols, vals = [], [], []
            clo = np.full(len(model.constraints), -np.inf)
            chi = np.full(len(model.constraints), np.inf)
            for r, con in enumerate(model.constraints):
                for i, coef in con.terms:
                    rows.append(r)
                    cols.append(i)
                    vals.append(coef)
                if con.sense in ("<=", "=="):
                    chi[r] = con.rhs
                if con.sense in (">=", "=="):
                    clo[r] = con.rhs
            a = csr_matrix((vals, (rows, cols)), shape=(len(model.constraints), n))
            constraints = [LinearConstraint(a, clo, chi)]
        t0 = time.perf_counter()
        try:
            res = _scipy_milp(
                c,
                constraints=constraints,
                integrality=integrality,
                bounds=Bounds(lb, ub),
                options={
                    "time_limit": options.time_limit_s,
                    "mip_rel_gap": options.mip_gap,
                    "presolve": True,
                },
            )
        except Exception as exc:  # pragma: no cover - defensive
            raise SolverBackendError(f"HiGHS backend failed: {exc}") from exc
        wall = time.perf_counter() - t0
        bound = getattr(res, "mip_dual_bound", None)
        bound = float(bound) + model.objective_constant if bound is not None else None

        def values_of(x: np.ndarray) -> dict[str, float]:
            out = {}
            for i, v in enumerate(model.variables):
                xi = float(x[i])
                if v.kind == BINARY:
                    xi = float(round(xi))
                out[v.name] = xi
            return out

        if res.status == 0:
            vals = values_of(res.x)
            return MiloSolution(SolveStatus.OPTIMAL, model.objective_value(vals), vals, bound, wall)
        if res.status == 1:
            if res.x is not None:
                vals = values_of(res.x)
                return MiloSolution(SolveStatus.FEASIBLE, model.objective_value(vals), vals, bound, wall)
            return MiloSolution(SolveStatus.TIME_LIMIT_NO_SOLUTION, None, None, bound, wall)
        if res.status == 2:
            return MiloSolution(SolveStatus.INFEASIBLE, None, None, None, wall)
        if res.status == 3:
            return MiloSolution(SolveStatus.UNBOUNDED, None, None, None, wall)
        raise SolverBackendError(f"HiGHS returned status {res.status}: {res.message}")


_DEFAULT_BACKEND: SolverBackend = HighsBackend()
_BACKENDS: dict[str, SolverBackend] = {"highs": _DEFAULT_BACKEND}


def register_backend(backend: SolverBackend) -> None:
    _BACKENDS[backend.name] = backend


def get_backend(name: str | None = None) -> SolverBackend:
    if name is None:
        return _DEFAULT_BACKEND
    try:
        return _BACKENDS[name]
    except KeyError:
        raise SolverBackendError(f"no solver backend registered under {name!r}") from None


def set_default_backend(name: str) -> None:
    global _DEFAULT_BACKEND
    _DEFAULT_BACKEND = get_backend(name)


def solve(
    model: MiloModel,
    options: SolveOptions | None = None,
    backend: SolverBackend | None = None,
    warm_tol: float = 1e-6,
) -> MiloSolution:
    """Solve a model, honoring its warm start as an incumbent.

    A warm start that fails the feasibility check is dropped (the solve
    proceeds cold). When the backend cannot match a feasible warm start
    within its limits, the warm start itself is returned as the
    incumbent, so callers can rely on monotonicity.
    """
    options = options or SolveOptions()
    backend = backend or _DEFAULT_BACKEND

    warm_obj: float | None = None
    if model.warm_start is not None and not model.check(model.warm_start, tol=warm_tol):
        warm_obj = model.objective_value(model.warm_start)

    result = backend.solve(model, options)

    if warm_obj is None:
        return result
    if result.status.has_solution:
        assert result.objective is not None
        if result.objective <= warm_obj + 1e-9:
            return result
        return MiloSolution(
            SolveStatus.FEASIBLE, warm_obj, dict(model.warm_start or {}), result.best_bound,
            result.wall_time_s, from_warm_start=True,
        )
    if result.status in (SolveStatus.INFEASIBLE, SolveStatus.UNBOUNDED):
        raise SolverBackendError(
            f"backend reported {result.status.value} for a model with a verified feasible warm start"
        )
    return MiloSolution(
        SolveStatus.FEASIBLE, warm_obj, dict(model.warm_start or {}), result.best_bound,
        result.wall_time_s, from_warm_start=True,
    )
