"""Builders for every optimization formulation in the pipeline.

All builders are deterministic: identical inputs produce identical
models, variable orderings and names. The routing formulations share one
arc-based core; the single-bus variant supports the reductions used by
the staged routing heuristic (drop school-to-stop arcs, flow-time
objective, fixed student-to-stop assignment) so ablation configurations
can toggle each one independently.

Variable naming scheme (LP-safe, ``@k`` suffix only in the fleet model):
``x|i>j``, ``w|i>j``, ``t|i``, ``r|i``, ``v|m``, ``e|i|s``, ``tau|i|s``,
``p|s``, ``d|s``, ``kap|m|s``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StrandedStudentError
from .milp import BINARY, CONTINUOUS, MiloModel
from .network import (
    ARC_FROM_ORIGIN,
    ARC_SCHOOL_SCHOOL,
    ARC_SCHOOL_STOP,
    ARC_STOP_SCHOOL,
    ARC_STOP_STOP,
    ARC_TO_DESTINATION,
    DESTINATION,
    ORIGIN,
    TravelTimeMatrix,
)

STOP_ARCS = (ARC_STOP_STOP, ARC_STOP_SCHOOL)  # arcs leaving a stop
SCHOOL_ARCS = (ARC_SCHOOL_SCHOOL, ARC_SCHOOL_STOP, ARC_TO_DESTINATION)  # arcs leaving a school
INTO_STOP_ARCS = (ARC_FROM_ORIGIN, ARC_STOP_STOP, ARC_SCHOOL_STOP)
INTO_SCHOOL_ARCS = (ARC_STOP_SCHOOL, ARC_SCHOOL_SCHOOL)


@dataclass(frozen=True)
class RoutingCase:
    """Inputs shared by the routing formulations.

    ``matrix`` covers exactly the stops and schools of this case;
    catchments map each student to the eligible stops within it. For a
    single-bus case the school list holds only schools with riders.
    """

    matrix: TravelTimeMatrix
    students: tuple[str, ...]
    school_of: dict[str, str]
    catchments: dict[str, tuple[str, ...]]
    board_fixed_s: float
    board_per_student_s: float
    deboard_fixed_s: float
    deboard_per_student_s: float
    max_route_time_s: float

    def __post_init__(self):
        for s in self.students:
            if not self.catchments.get(s):
                raise StrandedStudentError(
                    f"student {s} has no eligible stop in this routing case; "
                    "the model would be infeasible by construction",
                    student_id=s,
                )

    @property
    def stops(self) -> tuple[str, ...]:
        return self.matrix.stop_ids

    @property
    def schools(self) -> tuple[str, ...]:
        return self.matrix.school_ids

    def students_at_stop(self, stop: str) -> tuple[str, ...]:
        return tuple(s for s in self.students if stop in self.catchments[s])

    def school_counts(self) -> dict[str, int]:
        counts = {m: 0 for m in self.schools}
        for s in self.students:
            counts[self.school_of[s]] += 1
        return counts


def _arcs(matrix: TravelTimeMatrix, classes: tuple[str, ...] | None = None, skip: tuple[str, ...] = ()):
    for i, j, cls, dt in matrix.arcs():
        if cls in skip:
            continue
        if classes is None or cls in classes:
            yield i, j, cls, dt


# --------------------------------------------------------------------------
# Single-bus routing (full, and the reduced variants)
# --------------------------------------------------------------------------


def build_bus_routing_model(
    case: RoutingCase,
    capacity: int,
    keep_school_to_stop: bool = True,
    ride_time_objective: bool = True,
    assignment: dict[str, str] | None = None,
    name: str = "bus-routing",
) -> MiloModel:
    """Single-bus routing and scheduling model.

    With the default flags this is the complete single-bus formulation:
    joint stop selection, student assignment, sequencing and scheduling,
    minimizing total student ride time. The three reduction flags yield
    the reduced routing problem: ``keep_school_to_stop=False`` restricts
    routes to all pick-ups before all drop-offs, ``ride_time_objective=
    False`` swaps the objective for travel time weighted by on-board
    load, and ``assignment`` freezes student-to-stop assignment and stop
    selection (the model then only sequences and schedules).
    """

    if assignment is not None:
        return _build_fixed_assignment_model(case, capacity, keep_school_to_stop, ride_time_objective, assignment, name)

    m = MiloModel(name)
    mt = case.matrix
    skip = () if keep_school_to_stop else (ARC_SCHOOL_STOP,)
    t_max = case.max_route_time_s
    cap = float(capacity)
    counts = case.school_counts()
    if not case.students:
        raise StrandedStudentError("a routing case needs at least one student", student_id="<none>")

    arcs = list(_arcs(mt, skip=skip))
    stops, schools = mt.stop_ids, mt.school_ids

    for i, j, _, _ in arcs:
        m.add_var(f"x|{i}>{j}", BINARY)
    for i, j, _, _ in arcs:
        m.add_var(f"w|{i}>{j}", CONTINUOUS)
    for n in mt.node_ids:
        m.add_var(f"t|{n}", CONTINUOUS)
        m.add_var(f"r|{n}", BINARY)
    for sch in schools:
        m.add_var(f"v|{sch}", CONTINUOUS)
    for s in case.students:
        for i in case.catchments[s]:
            m.add_var(f"e|{i}|{s}", BINARY)
            m.add_var(f"tau|{i}|{s}", CONTINUOUS)
        m.add_var(f"p|{s}", CONTINUOUS)
        m.add_var(f"d|{s}", CONTINUOUS)
        m.add_var(f"kap|{case.school_of[s]}|{s}", CONTINUOUS)

    m.fix_var(f"r|{ORIGIN}", 1.0)
    m.fix_var(f"r|{DESTINATION}", 1.0)

    # Trip start/end window: time counted from the first stop, route ends by t_max.
    for i in stops:
        m.add_constraint(f"start[{i}]", [(f"t|{i}", 1.0), (f"x|{ORIGIN}>{i}", t_max)], "<=", t_max)
    m.add_constraint("horizon", [(f"t|{DESTINATION}", 1.0)], "<=", t_max)

    # Drop-off accounting per school.
    for sch in schools:
        terms = [(f"e|{i}|{s}", 1.0) for s in case.students if case.school_of[s] == sch for i in case.catchments[s]]
        terms.append((f"v|{sch}", -1.0))
        m.add_constraint(f"drops[{sch}]", terms, "==", 0.0)
        m.add_constraint(f"demand[{sch}]", [(f"v|{sch}", 1.0)], "==", float(counts[sch]))

    _route_structure(m, mt, arcs, stops, schools, bus=None)

    # A visited stop picks somebody up; students board only at visited stops.
    for i in stops:
        riders = case.students_at_stop(i)
        m.add_constraint(
            f"nonempty[{i}]", [(f"r|{i}", 1.0)] + [(f"e|{i}|{s}", -1.0) for s in riders], "<=", 0.0
        )
        for s in riders:
            m.add_constraint(f"board-at-visited[{i}|{s}]", [(f"e|{i}|{s}", 1.0), (f"r|{i}", -1.0)], "<=", 0.0)

    # Riding a bus forces a visit to the rider's school.
    for s in case.students:
        sch = case.school_of[s]
        terms = [(f"e|{i}|{s}", 1.0) for i in case.catchments[s]] + [(f"r|{sch}", -1.0)]
        m.add_constraint(f"school-visit[{s}]", terms, "<=", 0.0)

    # Each student boards exactly once.
    for s in case.students:
        m.add_constraint(f"cover[{s}]", [(f"e|{i}|{s}", 1.0) for i in case.catchments[s]], "==", 1.0)

    _loads_and_times(
        m, case, arcs, cap, t_max,
        pickup_terms=lambda i: ([(f"e|{i}|{s}", 1.0) for s in case.students_at_stop(i)], 0.0),
        drop_terms=lambda sch: ([(f"v|{sch}", 1.0)], 0.0),
    )

    # Student schedule linking: pick-up/drop-off times follow the bus clock.
    for s in case.students:
        sch = case.school_of[s]
        e_sum = [(f"e|{i}|{s}", 1.0) for i in case.catchments[s]]
        for i in case.catchments[s]:
            m.add_constraint(
                f"pu-upper[{i}|{s}]",
                [(f"tau|{i}|{s}", 1.0), (f"e|{i}|{s}", -t_max), (f"p|{s}", -1.0)],
                ">=",
                -t_max,
            )
            m.add_constraint(f"tau-gate[{i}|{s}]", [(f"tau|{i}|{s}", 1.0), (f"e|{i}|{s}", -t_max)], "<=", 0.0)
            m.add_constraint(f"tau-clock[{i}|{s}]", [(f"tau|{i}|{s}", 1.0), (f"t|{i}", -1.0)], "<=", 0.0)
            m.add_constraint(
                f"tau-tight[{i}|{s}]",
                [(f"tau|{i}|{s}", 1.0), (f"t|{i}", -1.0), (f"e|{i}|{s}", -t_max)],
                ">=",
                -t_max,
            )
        m.add_constraint(f"do-lower[{s}]", [(f"kap|{sch}|{s}", 1.0), (f"d|{s}", -1.0)], "<=", 0.0)
        m.add_constraint(f"pu-gate[{s}]", [(f"p|{s}", 1.0)] + [(v, -t_max) for v, _ in e_sum], "<=", 0.0)
        m.add_constraint(f"do-gate[{s}]", [(f"d|{s}", 1.0)] + [(v, -t_max) for v, _ in e_sum], "<=", 0.0)
        m.add_constraint(f"kap-gate[{s}]", [(f"kap|{sch}|{s}", 1.0)] + [(v, -t_max) for v, _ in e_sum], "<=", 0.0)
        m.add_constraint(f"kap-clock[{s}]", [(f"kap|{sch}|{s}", 1.0), (f"t|{sch}", -1.0)], "<=", 0.0)
        m.add_constraint(
            f"kap-tight[{s}]",
            [(f"kap|{sch}|{s}", 1.0), (f"t|{sch}", -1.0)] + [(v, -t_max) for v, _ in e_sum],
            ">=",
            -t_max,
        )

    if keep_school_to_stop:
        # No pick-up after the rider's school has been served.
        for s in case.students:
            sch = case.school_of[s]
            for i in case.catchments[s]:
                m.add_constraint(
                    f"pickup-order[{i}|{s}]",
                    [(f"e|{i}|{s}", t_max), (f"t|{sch}", -1.0), (f"t|{i}", 1.0)],
                    "<=",
                    t_max,
                )

    if ride_time_objective:
        obj = [(f"d|{s}", 1.0) for s in case.students] + [(f"p|{s}", -1.0) for s in case.students]
        m.set_objective(obj)
    else:
        m.set_objective([(f"w|{i}>{j}", dt) for i, j, _, dt in arcs])
    return m


def _route_structure(m: MiloModel, mt: TravelTimeMatrix, arcs, stops, schools, bus: str | None) -> None:
    """Flow balance, arc-visit linking and unit out-degree for visited nodes."""
    sfx = f"@{bus}" if bus else ""
    out_arcs: dict[str, list[tuple[str, str]]] = {}
    in_arcs: dict[str, list[tuple[str, str]]] = {}
    for i, j, _, _ in arcs:
        out_arcs.setdefault(i, []).append((i, j))
        in_arcs.setdefault(j, []).append((i, j))
    for n in mt.node_ids:
        terms = [(f"x|{i}>{j}{sfx}", 1.0) for i, j in out_arcs.get(n, [])]
        terms += [(f"x|{i}>{j}{sfx}", -1.0) for i, j in in_arcs.get(n, [])]
        m.add_constraint(f"flow[{n}]{sfx}", terms, "==", float(mt.flow_charge(n)))
    for i, j, _, _ in arcs:
        m.add_constraint(
            f"arc-ends[{i}>{j}]{sfx}",
            [(f"r|{i}{sfx}", 1.0), (f"r|{j}{sfx}", 1.0), (f"x|{i}>{j}{sfx}", -2.0)],
            ">=",
            0.0,
        )
    for n in list(stops) + list(schools):
        terms = [(f"x|{i}>{j}{sfx}", 1.0) for i, j in out_arcs.get(n, [])] + [(f"r|{n}{sfx}", -1.0)]
        m.add_constraint(f"visit-out[{n}]{sfx}", terms, "==", 0.0)


def _loads_and_times(m: MiloModel, case: RoutingCase, arcs, cap: float, t_max: float, pickup_terms, drop_terms, bus: str | None = None) -> None:
    """Load propagation, capacity and clock recursion along traveled arcs.

    ``pickup_terms(stop)`` / ``drop_terms(school)`` return the boarding
    and alighting head counts as ``(variable terms, constant)`` so the
    same core serves both the free-assignment and the pre-assigned
    (constant head count) formulations.
    """
    sfx = f"@{bus}" if bus else ""
    a1, b1 = case.board_fixed_s, case.board_per_student_s
    a2, b2 = case.deboard_fixed_s, case.deboard_per_student_s
    into_stop: dict[str, list[tuple[str, str]]] = {}
    into_school: dict[str, list[tuple[str, str]]] = {}
    for i, j, cls, _ in arcs:
        if cls in INTO_STOP_ARCS:
            into_stop.setdefault(j, []).append((i, j))
        elif cls in INTO_SCHOOL_ARCS:
            into_school.setdefault(j, []).append((i, j))

    for i, j, cls, dt in arcs:
        m.add_constraint(f"cap[{i}>{j}]{sfx}", [(f"w|{i}>{j}{sfx}", 1.0), (f"x|{i}>{j}{sfx}", -cap)], "<=", 0.0)
        if cls in STOP_ARCS:
            gain, gain_const = pickup_terms(i)
            inflow = [(f"w|{a}>{b}{sfx}", 1.0) for a, b in into_stop.get(i, [])]
            base = inflow + list(gain) + [(f"w|{i}>{j}{sfx}", -1.0)]
            m.add_constraint(
                f"load-up+[{i}>{j}]{sfx}", base + [(f"x|{i}>{j}{sfx}", cap)], "<=", cap - gain_const
            )
            m.add_constraint(
                f"load-up-[{i}>{j}]{sfx}",
                [(n, -c) for n, c in base] + [(f"x|{i}>{j}{sfx}", cap)],
                "<=",
                cap + gain_const,
            )
            m.add_constraint(
                f"clock-up[{i}>{j}]{sfx}",
                [(f"t|{i}{sfx}", 1.0), (f"t|{j}{sfx}", -1.0), (f"x|{i}>{j}{sfx}", t_max)]
                + [(n, b1 * c) for n, c in gain],
                "<=",
                t_max - a1 - dt - b1 * gain_const,
            )
        elif cls in SCHOOL_ARCS:
            loss, loss_const = drop_terms(i)
            inflow = [(f"w|{a}>{b}{sfx}", 1.0) for a, b in into_school.get(i, [])]
            base = inflow + [(n, -c) for n, c in loss] + [(f"w|{i}>{j}{sfx}", -1.0)]
            m.add_constraint(
                f"load-down+[{i}>{j}]{sfx}", base + [(f"x|{i}>{j}{sfx}", cap)], "<=", cap + loss_const
            )
            m.add_constraint(
                f"load-down-[{i}>{j}]{sfx}",
                [(n, -c) for n, c in base] + [(f"x|{i}>{j}{sfx}", cap)],
                "<=",
                cap - loss_const,
            )
            m.add_constraint(
                f"clock-down[{i}>{j}]{sfx}",
                [(f"t|{i}{sfx}", 1.0), (f"t|{j}{sfx}", -1.0), (f"x|{i}>{j}{sfx}", t_max)]
                + [(n, b2 * c) for n, c in loss],
                "<=",
                t_max - a2 - dt - b2 * loss_const,
            )


def _build_fixed_assignment_model(
    case: RoutingCase,
    capacity: int,
    keep_school_to_stop: bool,
    ride_time_objective: bool,
    assignment: dict[str, str],
    name: str,
) -> MiloModel:
    """Reduced routing: assignment and stop selection frozen to constants.

    Only the selected stops and attended schools remain as nodes, so the
    variables are the arc choices, loads, and the clock.
    """
    for s in case.students:
        stop = assignment.get(s)
        if stop is None or stop not in case.catchments[s]:
            raise StrandedStudentError(
                f"pre-assignment sends student {s} to an ineligible stop {stop!r}", student_id=s
            )
    selected = tuple(i for i in case.stops if any(assignment[s] == i for s in case.students))
    pickup_count = {i: sum(1 for s in case.students if assignment[s] == i) for i in selected}
    counts = case.school_counts()
    mt = case.matrix.restricted(selected, case.schools)

    m = MiloModel(name)
    skip = () if keep_school_to_stop else (ARC_SCHOOL_STOP,)
    arcs = list(_arcs(mt, skip=skip))
    t_max = case.max_route_time_s
    cap = float(capacity)

    for i, j, _, _ in arcs:
        m.add_var(f"x|{i}>{j}", BINARY)
    for i, j, _, _ in arcs:
        m.add_var(f"w|{i}>{j}", CONTINUOUS)
    for n in mt.node_ids:
        m.add_var(f"t|{n}", CONTINUOUS)

    for i in selected:
        m.add_constraint(f"start[{i}]", [(f"t|{i}", 1.0), (f"x|{ORIGIN}>{i}", t_max)], "<=", t_max)
    m.add_constraint("horizon", [(f"t|{DESTINATION}", 1.0)], "<=", t_max)

    out_arcs: dict[str, list[tuple[str, str]]] = {}
    in_arcs: dict[str, list[tuple[str, str]]] = {}
    for i, j, _, _ in arcs:
        out_arcs.setdefault(i, []).append((i, j))
        in_arcs.setdefault(j, []).append((i, j))
    for n in mt.node_ids:
        terms = [(f"x|{i}>{j}", 1.0) for i, j in out_arcs.get(n, [])]
        terms += [(f"x|{i}>{j}", -1.0) for i, j in in_arcs.get(n, [])]
        m.add_constraint(f"flow[{n}]", terms, "==", float(mt.flow_charge(n)))
    for n in list(selected) + list(case.schools):
        m.add_constraint(
            f"visit-out[{n}]", [(f"x|{i}>{j}", 1.0) for i, j in out_arcs.get(n, [])], "==", 1.0
        )

    reduced_case = RoutingCase(
        matrix=mt,
        students=case.students,
        school_of=case.school_of,
        catchments={s: (assignment[s],) for s in case.students},
        board_fixed_s=case.board_fixed_s,
        board_per_student_s=case.board_per_student_s,
        deboard_fixed_s=case.deboard_fixed_s,
        deboard_per_student_s=case.deboard_per_student_s,
        max_route_time_s=t_max,
    )
    _loads_and_times(
        m, reduced_case, arcs, cap, t_max,
        pickup_terms=lambda i: ([], float(pickup_count[i])),
        drop_terms=lambda sch: ([], float(counts[sch])),
    )

    if keep_school_to_stop:
        # Fixed assignment keeps the no-pick-up-after-school rule explicit.
        for s in case.students:
            m.add_constraint(
                f"pickup-order[{s}]",
                [(f"t|{case.school_of[s]}", 1.0), (f"t|{assignment[s]}", -1.0)],
                ">=",
                0.0,
            )

    if ride_time_objective:
        terms: dict[str, float] = {}
        for s in case.students:
            terms[f"t|{case.school_of[s]}"] = terms.get(f"t|{case.school_of[s]}", 0.0) + 1.0
            terms[f"t|{assignment[s]}"] = terms.get(f"t|{assignment[s]}", 0.0) - 1.0
        m.set_objective(list(terms.items()))
    else:
        m.set_objective([(f"w|{i}>{j}", dt) for i, j, _, dt in arcs])
    return m


# --------------------------------------------------------------------------
# Fleet (multi-bus) routing
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FleetCase:
    case: RoutingCase
    buses: tuple[tuple[str, int], ...]  # (bus id, capacity)


def build_fleet_routing_model(fleet: FleetCase, name: str = "fleet-routing") -> MiloModel:
    """Mixed-loading fleet model: every bus runs one origin-to-dest route.

    Same constraint families as the single-bus model, indexed by bus,
    plus fleet-level coupling: school demand is met across buses and each
    student is picked up by exactly one bus at exactly one stop.
    """
    case = fleet.case
    mt = case.matrix
    m = MiloModel(name)
    arcs = list(_arcs(mt))
    stops, schools = mt.stop_ids, mt.school_ids
    t_max = case.max_route_time_s
    counts = case.school_counts()

    for k, _ in fleet.buses:
        for i, j, _, _ in arcs:
            m.add_var(f"x|{i}>{j}@{k}", BINARY)
        for i, j, _, _ in arcs:
            m.add_var(f"w|{i}>{j}@{k}", CONTINUOUS)
        for n in mt.node_ids:
            m.add_var(f"t|{n}@{k}", CONTINUOUS)
            m.add_var(f"r|{n}@{k}", BINARY)
        for sch in schools:
            m.add_var(f"v|{sch}@{k}", CONTINUOUS)
        for s in case.students:
            for i in case.catchments[s]:
                m.add_var(f"e|{i}|{s}@{k}", BINARY)
                m.add_var(f"tau|{i}|{s}@{k}", CONTINUOUS)
            m.add_var(f"p|{s}@{k}", CONTINUOUS)
            m.add_var(f"d|{s}@{k}", CONTINUOUS)
            m.add_var(f"kap|{case.school_of[s]}|{s}@{k}", CONTINUOUS)

    for k, capacity in fleet.buses:
        cap = float(capacity)
        m.fix_var(f"r|{ORIGIN}@{k}", 1.0)
        m.fix_var(f"r|{DESTINATION}@{k}", 1.0)
        for i in stops:
            m.add_constraint(
                f"start[{i}]@{k}", [(f"t|{i}@{k}", 1.0), (f"x|{ORIGIN}>{i}@{k}", t_max)], "<=", t_max
            )
        m.add_constraint(f"horizon@{k}", [(f"t|{DESTINATION}@{k}", 1.0)], "<=", t_max)
        for sch in schools:
            terms = [
                (f"e|{i}|{s}@{k}", 1.0)
                for s in case.students
                if case.school_of[s] == sch
                for i in case.catchments[s]
            ]
            terms.append((f"v|{sch}@{k}", -1.0))
            m.add_constraint(f"drops[{sch}]@{k}", terms, "==", 0.0)

        _route_structure(m, mt, arcs, stops, schools, bus=k)

        for i in stops:
            riders = case.students_at_stop(i)
            m.add_constraint(
                f"nonempty[{i}]@{k}",
                [(f"r|{i}@{k}", 1.0)] + [(f"e|{i}|{s}@{k}", -1.0) for s in riders],
                "<=",
                0.0,
            )
            for s in riders:
                m.add_constraint(
                    f"board-at-visited[{i}|{s}]@{k}",
                    [(f"e|{i}|{s}@{k}", 1.0), (f"r|{i}@{k}", -1.0)],
                    "<=",
                    0.0,
                )
        for s in case.students:
            sch = case.school_of[s]
            terms = [(f"e|{i}|{s}@{k}", 1.0) for i in case.catchments[s]] + [(f"r|{sch}@{k}", -1.0)]
            m.add_constraint(f"school-visit[{s}]@{k}", terms, "<=", 0.0)

        _loads_and_times(
            m, case, arcs, cap, t_max,
            pickup_terms=lambda i, _k=k: ([(f"e|{i}|{s}@{_k}", 1.0) for s in case.students_at_stop(i)], 0.0),
            drop_terms=lambda sch, _k=k: ([(f"v|{sch}@{_k}", 1.0)], 0.0),
            bus=k,
        )

        for s in case.students:
            sch = case.school_of[s]
            e_sum = [(f"e|{i}|{s}@{k}", 1.0) for i in case.catchments[s]]
            for i in case.catchments[s]:
                m.add_constraint(
                    f"pu-upper[{i}|{s}]@{k}",
                    [(f"tau|{i}|{s}@{k}", 1.0), (f"e|{i}|{s}@{k}", -t_max), (f"p|{s}@{k}", -1.0)],
                    ">=",
                    -t_max,
                )
                m.add_constraint(
                    f"tau-gate[{i}|{s}]@{k}", [(f"tau|{i}|{s}@{k}", 1.0), (f"e|{i}|{s}@{k}", -t_max)], "<=", 0.0
                )
                m.add_constraint(
                    f"tau-clock[{i}|{s}]@{k}", [(f"tau|{i}|{s}@{k}", 1.0), (f"t|{i}@{k}", -1.0)], "<=", 0.0
                )
                m.add_constraint(
                    f"tau-tight[{i}|{s}]@{k}",
                    [(f"tau|{i}|{s}@{k}", 1.0), (f"t|{i}@{k}", -1.0), (f"e|{i}|{s}@{k}", -t_max)],
                    ">=",
                    -t_max,
                )
                m.add_constraint(
                    f"pickup-order[{i}|{s}]@{k}",
                    [(f"e|{i}|{s}@{k}", t_max), (f"t|{sch}@{k}", -1.0), (f"t|{i}@{k}", 1.0)],
                    "<=",
                    t_max,
                )
            m.add_constraint(
                f"do-lower[{s}]@{k}", [(f"kap|{sch}|{s}@{k}", 1.0), (f"d|{s}@{k}", -1.0)], "<=", 0.0
            )
            m.add_constraint(f"pu-gate[{s}]@{k}", [(f"p|{s}@{k}", 1.0)] + [(v, -t_max) for v, _ in e_sum], "<=", 0.0)
            m.add_constraint(f"do-gate[{s}]@{k}", [(f"d|{s}@{k}", 1.0)] + [(v, -t_max) for v, _ in e_sum], "<=", 0.0)
            m.add_constraint(
                f"kap-gate[{s}]@{k}", [(f"kap|{sch}|{s}@{k}", 1.0)] + [(v, -t_max) for v, _ in e_sum], "<=", 0.0
            )
            m.add_constraint(
                f"kap-clock[{s}]@{k}", [(f"kap|{sch}|{s}@{k}", 1.0), (f"t|{sch}@{k}", -1.0)], "<=", 0.0
            )
            m.add_constraint(
                f"kap-tight[{s}]@{k}",
                [(f"kap|{sch}|{s}@{k}", 1.0), (f"t|{sch}@{k}", -1.0)] + [(v, -t_max) for v, _ in e_sum],
                ">=",
                -t_max,
            )

    # Fleet coupling: demand split across buses, one bus and stop per student.
    for sch in schools:
        m.add_constraint(
            f"demand[{sch}]",
            [(f"v|{sch}@{k}", 1.0) for k, _ in fleet.buses],
            "==",
            float(counts[sch]),
        )
    for s in case.students:
        m.add_constraint(
            f"cover[{s}]",
            [(f"e|{i}|{s}@{k}", 1.0) for k, _ in fleet.buses for i in case.catchments[s]],
            "==",
            1.0,
        )

    obj = []
    for k, _ in fleet.buses:
        obj += [(f"d|{s}@{k}", 1.0) for s in case.students]
        obj += [(f"p|{s}@{k}", -1.0) for s in case.students]
    m.set_objective(obj)
    return m


# --------------------------------------------------------------------------
# Clustering formulations
# --------------------------------------------------------------------------


def build_assignment_model(
    dist_sq: np.ndarray,
    capacities: list[int],
    require_nonempty: bool = True,
    name: str = "kmeans-assignment",
) -> MiloModel:
    """Capacity-constrained assignment step of the k-means loop.

    ``dist_sq[s, k]`` is the squared distance of point s to the fixed
    centroid k; the optimum assigns every point to one cluster at minimum
    total squared distance under the cluster size caps. A non-empty lower
    bound per cluster keeps downstream per-bus routing well-posed.
    """
    n, kk = dist_sq.shape
    m = MiloModel(name)
    for s in range(n):
        for k in range(kk):
            m.add_var(f"z|{s}|{k}", BINARY)
    for s in range(n):
        m.add_constraint(f"assign[{s}]", [(f"z|{s}|{k}", 1.0) for k in range(kk)], "==", 1.0)
    for k in range(kk):
        m.add_constraint(
            f"cap[{k}]", [(f"z|{s}|{k}", 1.0) for s in range(n)], "<=", float(capacities[k])
        )
        if require_nonempty:
            m.add_constraint(
                f"nonempty[{k}]", [(f"z|{s}|{k}", 1.0) for s in range(n)], ">=", 1.0
            )
    m.set_objective([(f"z|{s}|{k}", float(dist_sq[s, k])) for s in range(n) for k in range(kk)])
    return m


@dataclass
class PairClusteringModel:
    model: MiloModel
    students: tuple[str, ...]
    buses: tuple[str, ...]
    fixed: dict[str, str]
    fixed_pair_cost: float  # objective term contributed by fully fixed pairs


def build_pair_clustering_model(
    students: list[str],
    buses: list[str],
    capacities: dict[str, int],
    pair_time: dict[tuple[str, str], float],
    fixed: dict[str, str] | None = None,
    warm_partition: dict[str, str] | None = None,
    require_nonempty: bool = True,
    name: str = "road-aware-clustering",
) -> PairClusteringModel:
    """Road-aware clustering: minimize within-cluster pairwise travel time.

    Both directed times of a pair count (the objective sums over ordered
    pairs), so an unordered co-cluster indicator carries the coefficient
    ``time(s,s') + time(s',s)``. ``fixed`` pins students to their cluster;
    pairs fixed into the same cluster contribute a constant that is
    reported separately and excluded from the model objective.
    """
    fixed = fixed or {}
    m = MiloModel(name)
    for s in students:
        for k in buses:
            m.add_var(f"y|{s}|{k}", BINARY)
    for s, k0 in fixed.items():
        for k in buses:
            m.fix_var(f"y|{s}|{k}", 1.0 if k == k0 else 0.0)

    def cost(a: str, b: str) -> float:
        return pair_time[(a, b)] + pair_time[(b, a)]

    fixed_cost = 0.0
    obj_terms: list[tuple[str, float]] = []
    for ia in range(len(students)):
        for ib in range(ia + 1, len(students)):
            a, b = students[ia], students[ib]
            ka, kb = fixed.get(a), fixed.get(b)
            if ka is not None and kb is not None:
                if ka == kb:
                    fixed_cost += cost(a, b)
                continue
            xvar = m.add_var(f"pair|{a}|{b}", BINARY)
            obj_terms.append((xvar, cost(a, b)))
            for k in buses:
                if (ka is not None and ka != k) or (kb is not None and kb != k):
                    continue
                m.add_constraint(
                    f"together[{a}|{b}|{k}]",
                    [(xvar, 1.0), (f"y|{a}|{k}", -1.0), (f"y|{b}|{k}", -1.0)],
                    ">=",
                    -1.0,
                )

    for s in students:
        m.add_constraint(f"assign[{s}]", [(f"y|{s}|{k}", 1.0) for k in buses], "==", 1.0)
    for k in buses:
        m.add_constraint(
            f"cap[{k}]", [(f"y|{s}|{k}", 1.0) for s in students], "<=", float(capacities[k])
        )
        if require_nonempty:
            m.add_constraint(f"nonempty[{k}]", [(f"y|{s}|{k}", 1.0) for s in students], ">=", 1.0)
    m.set_objective(obj_terms)

    if warm_partition is not None:
        warm: dict[str, float] = {}
        for s in students:
            for k in buses:
                warm[f"y|{s}|{k}"] = 1.0 if warm_partition[s] == k else 0.0
        for ia in range(len(students)):
            for ib in range(ia + 1, len(students)):
                a, b = students[ia], students[ib]
                if m.has_var(f"pair|{a}|{b}"):
                    warm[f"pair|{a}|{b}"] = 1.0 if warm_partition[a] == warm_partition[b] else 0.0
        m.set_warm_start(warm)

    return PairClusteringModel(m, tuple(students), tuple(buses), dict(fixed), fixed_cost)


def pair_objective(partition: dict[str, str], pair_time: dict[tuple[str, str], float]) -> float:
    """Ordered-pair within-cluster travel time of a full partition."""
    total = 0.0
    ids = sorted(partition)
    for a in ids:
        for b in ids:
            if a != b and partition[a] == partition[b]:
                total += pair_time[(a, b)]
    return total


def build_stop_cover_model(
    students: list[str],
    catchments: dict[str, tuple[str, ...]],
    stops: list[str],
    name: str = "stop-cover",
) -> MiloModel:
    """Stop-minimizing pre-assignment: a set-cover with explicit assignment."""
    m = MiloModel(name)
    for i in stops:
        m.add_var(f"r|{i}", BINARY)
    for s in students:
        for i in catchments[s]:
            m.add_var(f"e|{i}|{s}", BINARY)
    for s in students:
        if not catchments.get(s):
            raise StrandedStudentError(f"student {s} has no stop in the cluster stop set", student_id=s)
        m.add_constraint(f"assign[{s}]", [(f"e|{i}|{s}", 1.0) for i in catchments[s]], "==", 1.0)
        for i in catchments[s]:
            m.add_constraint(f"open[{i}|{s}]", [(f"e|{i}|{s}", 1.0), (f"r|{i}", -1.0)], "<=", 0.0)
    m.set_objective([(f"r|{i}", 1.0) for i in stops])
    return m
