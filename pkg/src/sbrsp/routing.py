"""Phase 2: per-cluster stop selection, sequencing and scheduling.

Each bus is routed inside its service region in three steps: a
stop-minimizing pre-assignment (set cover), an exact solve of the
reduced sequencing model, and a warm-started solve of the complete
single-bus model seeded with the lifted reduced solution. Ablation
flags can disable each step.

All published schedules are recomputed tightly along the chosen path
(earliest feasible times), so reported solutions are deterministic and
independent of solver slack.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

from .clustering import ClusterAssignment
from .errors import (
    LiftError,
    ModelInfeasibleError,
    SolveTimeoutError,
    StrandedStudentError,
)
from .formulations import (
    FleetCase,
    RoutingCase,
    build_bus_routing_model,
    build_fleet_routing_model,
    build_stop_cover_model,
)
from .instance import Instance
from .milp import MiloModel, MiloSolution, SolveOptions, SolveStatus, solve
from .network import DESTINATION, ORIGIN, TravelTimeMatrix


@dataclass
class RoutingOptions:
    time_limit_reduced_s: float = 60.0
    time_limit_full_s: float = 120.0
    time_limit_cover_s: float = 30.0
    mip_gap: float = 1e-4
    jobs: int = 1
    # Ablation toggles (base configuration keeps the defaults).
    use_preassignment: bool = True
    use_reduced: bool = True
    reduced_keep_school_to_stop: bool = False
    reduced_ride_time_objective: bool = False

    @classmethod
    def from_instance(cls, instance: Instance, **overrides) -> "RoutingOptions":
        p = instance.params
        base = cls(
            time_limit_reduced_s=p.time_limit_reduced_s,
            time_limit_full_s=p.time_limit_full_s,
            mip_gap=p.mip_gap,
        )
        return replace(base, **overrides)


@dataclass(frozen=True)
class StopPreassignment:
    """Minimum selected stop set plus a student-to-stop map onto it."""

    selected: tuple[str, ...]
    student_stop: dict[str, str]


@dataclass
class ClusterContext:
    """Everything needed to route one bus in its service region."""

    bus_id: str
    capacity: int
    case: RoutingCase
    walk_m: dict[tuple[str, str], float]


@dataclass
class BusRoute:
    bus_id: str
    sequence: tuple[str, ...]  # origin ... destination
    times: dict[str, float]
    student_stop: dict[str, str]
    pickup_s: dict[str, float]
    dropoff_s: dict[str, float]
    loads: dict[tuple[str, str], int]
    duration_s: float

    @property
    def ride_s(self) -> dict[str, float]:
        return {s: self.dropoff_s[s] - self.pickup_s[s] for s in self.student_stop}

    @property
    def objective_s(self) -> float:
        return sum(self.ride_s.values())

    @property
    def stops_visited(self) -> tuple[str, ...]:
        return tuple(n for n in self.sequence if n in set(self.student_stop.values()))

    def to_dict(self) -> dict:
        return {
            "bus": self.bus_id,
            "sequence": list(self.sequence),
            "times_s": {n: self.times[n] for n in self.sequence},
            "student_stop": dict(sorted(self.student_stop.items())),
            "pickup_s": dict(sorted(self.pickup_s.items())),
            "dropoff_s": dict(sorted(self.dropoff_s.items())),
            "loads": {f"{a}>{b}": v for (a, b), v in self.loads.items()},
            "duration_s": self.duration_s,
            "ride_total_s": self.objective_s,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BusRoute":
        loads = {}
        for key, v in data.get("loads", {}).items():
            a, b = key.split(">")
            loads[(a, b)] = int(v)
        return cls(
            bus_id=data["bus"],
            sequence=tuple(data["sequence"]),
            times={n: float(t) for n, t in data["times_s"].items()},
            student_stop=dict(data["student_stop"]),
            pickup_s={k: float(v) for k, v in data["pickup_s"].items()},
            dropoff_s={k: float(v) for k, v in data["dropoff_s"].items()},
            loads=loads,
            duration_s=float(data["duration_s"]),
        )


@dataclass
class ClusterStats:
    bus_id: str
    status: str = "ok"
    preassign_stops: int | None = None
    reduced_objective: float | None = None
    reduced_status: str | None = None
    lifted_objective: float | None = None
    lift_failed: bool = False
    full_objective: float | None = None
    full_status: str | None = None
    full_from_warm_start: bool = False
    wall_time_s: float = 0.0


@dataclass
class RouteSolution:
    routes: tuple[BusRoute, ...]
    stats: dict[str, ClusterStats] = field(default_factory=dict)

    @property
    def total_ride_s(self) -> float:
        return sum(r.objective_s for r in self.routes)

    def route_of(self, bus_id: str) -> BusRoute:
        for r in self.routes:
            if r.bus_id == bus_id:
                return r
        raise KeyError(bus_id)

    def student_assignments(self) -> dict[str, tuple[str, str]]:
        """student -> (bus, stop)."""
        out = {}
        for r in self.routes:
            for s, stop in r.student_stop.items():
                out[s] = (r.bus_id, stop)
        return out

    def to_dict(self) -> dict:
        return {
            "total_ride_s": self.total_ride_s,
            "routes": [r.to_dict() for r in sorted(self.routes, key=lambda r: r.bus_id)],
            "stats": {
                k: {
                    "status": st.status,
                    "preassign_stops": st.preassign_stops,
                    "reduced_objective": st.reduced_objective,
                    "reduced_status": st.reduced_status,
                    "lifted_objective": st.lifted_objective,
                    "lift_failed": st.lift_failed,
                    "full_objective": st.full_objective,
                    "full_status": st.full_status,
                    "full_from_warm_start": st.full_from_warm_start,
                }
                for k, st in sorted(self.stats.items())
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RouteSolution":
        routes = tuple(BusRoute.from_dict(r) for r in data.get("routes", []))
        return cls(routes=routes)


# --------------------------------------------------------------------------
# Cluster context construction
# --------------------------------------------------------------------------


def make_cluster_context(
    instance: Instance,
    ttm: TravelTimeMatrix,
    bus_id: str,
    student_ids: tuple[str, ...],
    stop_ids: tuple[str, ...],
) -> ClusterContext:
    p = instance.params
    counts: dict[str, int] = {}
    for s in student_ids:
        counts[instance.student_by_id[s].school] = counts.get(instance.student_by_id[s].school, 0) + 1
    schools = tuple(m.id for m in instance.schools if counts.get(m.id, 0) > 0)
    stops = tuple(i for i in ttm.stop_ids if i in set(stop_ids))
    matrix = ttm.restricted(stops, schools)
    catchments: dict[str, tuple[str, ...]] = {}
    walk: dict[tuple[str, str], float] = {}
    for s in sorted(student_ids):
        eligible = tuple(i for i in stops if i in instance.catchment(s))
        if not eligible:
            raise StrandedStudentError(
                f"student {s} has no stop of bus {bus_id} within walking distance",
                student_id=s,
                bus_id=bus_id,
            )
        catchments[s] = eligible
        for i in eligible:
            walk[(s, i)] = instance.walk_distance(s, i)
    case = RoutingCase(
        matrix=matrix,
        students=tuple(sorted(student_ids)),
        school_of={s: instance.student_by_id[s].school for s in student_ids},
        catchments=catchments,
        board_fixed_s=p.board_fixed_s,
        board_per_student_s=p.board_per_student_s,
        deboard_fixed_s=p.deboard_fixed_s,
        deboard_per_student_s=p.deboard_per_student_s,
        max_route_time_s=p.max_route_time_s,
    )
    return ClusterContext(bus_id, instance.bus_by_id[bus_id].capacity, case, walk)


# --------------------------------------------------------------------------
# Tight schedule recursion
# --------------------------------------------------------------------------


def schedule_sequence(
    case: RoutingCase,
    sequence: tuple[str, ...],
    pickup_counts: dict[str, int],
    drop_counts: dict[str, int],
) -> dict[str, float]:
    """Earliest clock times along a fixed visit sequence.

    The clock starts at zero on the first stop; boarding and alighting
    dwell times accrue before departing each node.
    """
    a1, b1 = case.board_fixed_s, case.board_per_student_s
    a2, b2 = case.deboard_fixed_s, case.deboard_per_student_s
    stops = set(case.stops)
    times = {ORIGIN: 0.0}
    for prev, cur in zip(sequence, sequence[1:]):
        if prev == ORIGIN:
            times[cur] = 0.0
            continue
        if prev in stops:
            dwell = a1 + b1 * pickup_counts.get(prev, 0)
        else:
            dwell = a2 + b2 * drop_counts.get(prev, 0)
        times[cur] = times[prev] + dwell + case.matrix.time(prev, cur)
    return times


def _route_from_plan(
    ctx: ClusterContext, sequence: tuple[str, ...], student_stop: dict[str, str]
) -> BusRoute:
    case = ctx.case
    pickup_counts: dict[str, int] = {}
    drop_counts: dict[str, int] = {}
    for s, stop in student_stop.items():
        pickup_counts[stop] = pickup_counts.get(stop, 0) + 1
        drop_counts[case.school_of[s]] = drop_counts.get(case.school_of[s], 0) + 1
    times = schedule_sequence(case, sequence, pickup_counts, drop_counts)
    pickup_s = {s: times[stop] for s, stop in student_stop.items()}
    dropoff_s = {s: times[case.school_of[s]] for s in student_stop}
    loads: dict[tuple[str, str], int] = {}
    aboard = 0
    stops = set(case.stops)
    for prev, cur in zip(sequence, sequence[1:]):
        if prev in stops:
            aboard += pickup_counts.get(prev, 0)
        elif prev in set(case.schools):
            aboard -= drop_counts.get(prev, 0)
        loads[(prev, cur)] = aboard
    return BusRoute(
        bus_id=ctx.bus_id,
        sequence=sequence,
        times=times,
        student_stop=dict(sorted(student_stop.items())),
        pickup_s=pickup_s,
        dropoff_s=dropoff_s,
        loads=loads,
        duration_s=times[DESTINATION],
    )


def extract_sequence(solution: MiloSolution, matrix: TravelTimeMatrix, suffix: str = "") -> tuple[str, ...]:
    """Follow the chosen arcs from the origin depot to the destination."""
    nxt: dict[str, str] = {}
    for i, j, _, _ in matrix.arcs():
        if solution.value(f"x|{i}>{j}{suffix}") > 0.5:
            if i in nxt:
                raise ModelInfeasibleError(f"node {i} has two outgoing arcs in the solution")
            nxt[i] = j
    seq = [ORIGIN]
    seen = {ORIGIN}
    while seq[-1] != DESTINATION:
        cur = seq[-1]
        if cur not in nxt:
            raise ModelInfeasibleError(f"route breaks off at {cur}")
        step = nxt[cur]
        if step in seen:
            raise ModelInfeasibleError(f"route revisits {step}")
        seq.append(step)
        seen.add(step)
    return tuple(seq)


# --------------------------------------------------------------------------
# Pipeline stages
# --------------------------------------------------------------------------


def stop_min_preassign(ctx: ClusterContext, options: RoutingOptions | None = None) -> StopPreassignment:
    """Select the fewest stops covering the cluster, then map students.

    Students covered by several selected stops go to the closest one by
    walking distance (stop id breaks ties). In a minimum cover every
    selected stop keeps at least one student.
    """
    opts = options or RoutingOptions()
    case = ctx.case
    model = build_stop_cover_model(list(case.students), case.catchments, list(case.stops))
    sol = solve(model, SolveOptions(time_limit_s=opts.time_limit_cover_s, mip_gap=0.0))
    if sol.status is not SolveStatus.OPTIMAL:
        if sol.status is SolveStatus.FEASIBLE:
            gap = None
            if sol.best_bound is not None and sol.objective:
                gap = (sol.objective - sol.best_bound) / max(1.0, abs(sol.objective))
            raise SolveTimeoutError(
                f"stop cover for bus {ctx.bus_id} not proven optimal in time (gap {gap})",
                best_bound=sol.best_bound,
            )
        raise ModelInfeasibleError(f"stop cover for bus {ctx.bus_id} came back {sol.status.value}")
    selected = tuple(i for i in case.stops if sol.value(f"r|{i}") > 0.5)
    chosen = set(selected)
    student_stop = {}
    for s in case.students:
        options_s = [i for i in case.catchments[s] if i in chosen]
        student_stop[s] = min(options_s, key=lambda i: (ctx.walk_m[(s, i)], i))
    used = {student_stop[s] for s in case.students}
    assert used == chosen, "minimum cover left a selected stop without students"
    return StopPreassignment(selected, student_stop)


def solve_reduced_routing(
    ctx: ClusterContext,
    pre: StopPreassignment | None,
    options: RoutingOptions | None = None,
) -> tuple[BusRoute, MiloSolution, dict[str, str]]:
    """Solve the reduced sequencing model; returns the tight route too.

    ``pre=None`` keeps assignment and stop selection free (the
    no-pre-assignment ablation). Raises ModelInfeasibleError when the
    route cannot fit the time budget, SolveTimeoutError when the solver
    ran out of time without an incumbent.
    """
    opts = options or RoutingOptions()
    case = ctx.case
    model = build_bus_routing_model(
        case,
        ctx.capacity,
        keep_school_to_stop=opts.reduced_keep_school_to_stop,
        ride_time_objective=opts.reduced_ride_time_objective,
        assignment=None if pre is None else pre.student_stop,
        name=f"reduced[{ctx.bus_id}]",
    )
    sol = solve(model, SolveOptions(time_limit_s=opts.time_limit_reduced_s, mip_gap=opts.mip_gap))
    if sol.status is SolveStatus.INFEASIBLE:
        raise ModelInfeasibleError(
            f"reduced routing for bus {ctx.bus_id} is infeasible: the route cannot fit "
            f"the {case.max_route_time_s:.0f} s time budget"
        )
    if not sol.status.has_solution:
        raise SolveTimeoutError(
            f"reduced routing for bus {ctx.bus_id} hit its time limit with no incumbent",
            best_bound=sol.best_bound,
        )
    if pre is not None:
        assignment = dict(pre.student_stop)
        matrix = case.matrix.restricted(
            tuple(i for i in case.stops if i in set(pre.selected)), case.schools
        )
    else:
        assignment = {}
        for s in case.students:
            for i in case.catchments[s]:
                if sol.value(f"e|{i}|{s}") > 0.5:
                    assignment[s] = i
                    break
        matrix = case.matrix
    sequence = extract_sequence(sol, matrix)
    route = _route_from_plan(ctx, sequence, assignment)
    return route, sol, assignment


def lift_to_warm_start(ctx: ClusterContext, route: BusRoute) -> tuple[dict[str, float], float]:
    """Lift a reduced-model route into a full-model value map.

    Times are recomputed with boarding/alighting dwell included; the
    lifted map covers every nonzero variable of the complete single-bus
    model. Fails when the recomputed end time exceeds the route budget.
    """
    case = ctx.case
    if route.duration_s > case.max_route_time_s + 1e-9:
        raise LiftError(
            f"lift for bus {ctx.bus_id} lands at {route.duration_s:.1f} s, over the "
            f"{case.max_route_time_s:.0f} s budget"
        )
    values: dict[str, float] = {}
    for prev, cur in zip(route.sequence, route.sequence[1:]):
        values[f"x|{prev}>{cur}"] = 1.0
        values[f"w|{prev}>{cur}"] = float(route.loads[(prev, cur)])
    for n in route.sequence:
        values[f"r|{n}"] = 1.0
        values[f"t|{n}"] = route.times[n]
    counts = case.school_counts()
    for sch in case.schools:
        values[f"v|{sch}"] = float(counts[sch])
    for s in case.students:
        stop = route.student_stop[s]
        sch = case.school_of[s]
        values[f"e|{stop}|{s}"] = 1.0
        values[f"tau|{stop}|{s}"] = route.times[stop]
        values[f"p|{s}"] = route.pickup_s[s]
        values[f"d|{s}"] = route.dropoff_s[s]
        values[f"kap|{sch}|{s}"] = route.times[sch]
    return values, route.objective_s


def solve_full_routing(
    ctx: ClusterContext,
    warm: dict[str, float] | None = None,
    options: RoutingOptions | None = None,
) -> tuple[BusRoute, MiloSolution]:
    """Warm-started (or cold) solve of the complete single-bus model."""
    opts = options or RoutingOptions()
    case = ctx.case
    model = build_bus_routing_model(case, ctx.capacity, name=f"full[{ctx.bus_id}]")
    if warm is not None:
        model.set_warm_start(warm)
    sol = solve(model, SolveOptions(time_limit_s=opts.time_limit_full_s, mip_gap=opts.mip_gap))
    if sol.status is SolveStatus.INFEASIBLE:
        raise ModelInfeasibleError(f"full routing for bus {ctx.bus_id} is infeasible")
    if not sol.status.has_solution:
        raise SolveTimeoutError(
            f"full routing for bus {ctx.bus_id} found no incumbent in time",
            best_bound=sol.best_bound,
        )
    assignment = {}
    for s in case.students:
        for i in case.catchments[s]:
            if sol.value(f"e|{i}|{s}") > 0.5:
                assignment[s] = i
                break
    sequence = extract_sequence(sol, case.matrix)
    route = _route_from_plan(ctx, sequence, assignment)
    return route, sol


def _heuristic_sequence(ctx: ClusterContext, pre: StopPreassignment) -> tuple[str, ...]:
    """Nearest-neighbor ordering of the selected stops, then schools."""
    case = ctx.case
    remaining = list(pre.selected)
    seq = [ORIGIN]
    cur = min(remaining)  # deterministic entry stop
    seq.append(cur)
    remaining.remove(cur)
    while remaining:
        cur = min(remaining, key=lambda i: (case.matrix.time(seq[-1], i), i))
        seq.append(cur)
        remaining.remove(cur)
    schools = list(case.schools)
    while schools:
        nxt = min(schools, key=lambda m: (case.matrix.time(seq[-1], m), m))
        seq.append(nxt)
        schools.remove(nxt)
    seq.append(DESTINATION)
    return tuple(seq)


def route_cluster(ctx: ClusterContext, options: RoutingOptions | None = None) -> tuple[BusRoute, ClusterStats]:
    """Run the staged routing pipeline for one bus."""
    opts = options or RoutingOptions()
    stats = ClusterStats(bus_id=ctx.bus_id)
    warm: dict[str, float] | None = None

    pre: StopPreassignment | None = None
    if opts.use_preassignment:
        pre = stop_min_preassign(ctx, opts)
        stats.preassign_stops = len(pre.selected)

    if opts.use_reduced:
        reduced_route, reduced_sol, _assignment = solve_reduced_routing(ctx, pre, opts)
        stats.reduced_objective = reduced_sol.objective
        stats.reduced_status = reduced_sol.status.value
        try:
            warm, lifted = lift_to_warm_start(ctx, reduced_route)
            stats.lifted_objective = lifted
        except LiftError:
            stats.lift_failed = True
            warm = None
    elif pre is not None:
        # No reduced stage: seed the full solve from a heuristic ordering
        # of the pre-assigned stops when it fits the time budget.
        try:
            seq = _heuristic_sequence(ctx, pre)
            heuristic_route = _route_from_plan(ctx, seq, pre.student_stop)
            warm, lifted = lift_to_warm_start(ctx, heuristic_route)
            stats.lifted_objective = lifted
        except LiftError:
            stats.lift_failed = True
            warm = None

    route, full_sol = solve_full_routing(ctx, warm, opts)
    stats.full_objective = route.objective_s
    stats.full_status = full_sol.status.value
    stats.full_from_warm_start = full_sol.from_warm_start
    stats.wall_time_s = full_sol.wall_time_s
    return route, stats


def route_all_clusters(
    clusters: ClusterAssignment,
    instance: Instance,
    ttm: TravelTimeMatrix,
    options: RoutingOptions | None = None,
) -> RouteSolution:
    """Route every cluster; failures carry the cluster's bus id."""
    opts = options or RoutingOptions.from_instance(instance)
    contexts = []
    for k in clusters.buses:
        members = clusters.members(k)
        if not members:
            raise ModelInfeasibleError(f"cluster for bus {k} is empty; routing needs riders")
        contexts.append(make_cluster_context(instance, ttm, k, members, clusters.stop_sets.get(k, ())))

    def run(ctx: ClusterContext):
        try:
            return ctx.bus_id, route_cluster(ctx, opts), None
        except Exception as exc:  # propagated with cluster id by caller
            return ctx.bus_id, None, exc

    if opts.jobs > 1:
        with ThreadPoolExecutor(max_workers=opts.jobs) as pool:
            results = list(pool.map(run, contexts))
    else:
        results = [run(ctx) for ctx in contexts]

    routes = []
    stats = {}
    for bus_id, outcome, exc in results:
        if exc is not None:
            exc.args = (f"[cluster {bus_id}] {exc.args[0] if exc.args else exc}",) + tuple(exc.args[1:])
            raise exc
        route, st = outcome
        routes.append(route)
        stats[bus_id] = st
    routes.sort(key=lambda r: r.bus_id)
    return RouteSolution(tuple(routes), stats)


# --------------------------------------------------------------------------
# Direct fleet solve and whole-solution validation
# --------------------------------------------------------------------------


def make_fleet_case(instance: Instance, ttm: TravelTimeMatrix, student_ids: list[str]) -> FleetCase:
    p = instance.params
    catchments = {}
    for s in sorted(student_ids):
        eligible = tuple(i for i in ttm.stop_ids if i in instance.catchment(s))
        if not eligible:
            raise StrandedStudentError(f"student {s} has no stop within walking distance", student_id=s)
        catchments[s] = eligible
    case = RoutingCase(
        matrix=ttm,
        students=tuple(sorted(student_ids)),
        school_of={s: instance.student_by_id[s].school for s in student_ids},
        catchments=catchments,
        board_fixed_s=p.board_fixed_s,
        board_per_student_s=p.board_per_student_s,
        deboard_fixed_s=p.deboard_fixed_s,
        deboard_per_student_s=p.deboard_per_student_s,
        max_route_time_s=p.max_route_time_s,
    )
    return FleetCase(case, tuple((b.id, b.capacity) for b in instance.buses))


def solve_fleet_routing(
    instance: Instance,
    ttm: TravelTimeMatrix,
    student_ids: list[str] | None = None,
    time_limit_s: float = 300.0,
    mip_gap: float = 0.0,
) -> RouteSolution:
    """Solve the multi-bus model directly (tiny instances only)."""
    ids = sorted(student_ids if student_ids is not None else [s.id for s in instance.students])
    fleet = make_fleet_case(instance, ttm, ids)
    model = build_fleet_routing_model(fleet)
    sol = solve(model, SolveOptions(time_limit_s=time_limit_s, mip_gap=mip_gap))
    if sol.status is SolveStatus.INFEASIBLE:
        raise ModelInfeasibleError("fleet routing model is infeasible")
    if not sol.status.has_solution:
        raise SolveTimeoutError("fleet routing found no incumbent in time", best_bound=sol.best_bound)
    routes = []
    case = fleet.case
    for k, capacity in fleet.buses:
        assignment = {}
        for s in case.students:
            for i in case.catchments[s]:
                if sol.value(f"e|{i}|{s}@{k}") > 0.5:
                    assignment[s] = i
                    break
        sequence = extract_sequence(sol, case.matrix, suffix=f"@{k}")
        ctx = ClusterContext(k, capacity, case, {})
        routes.append(_route_from_plan(ctx, sequence, assignment))
    stats = {
        k: ClusterStats(bus_id=k, full_objective=sol.objective, full_status=sol.status.value)
        for k, _ in fleet.buses
    }
    return RouteSolution(tuple(routes), stats)


def assemble_fleet_values(solution: RouteSolution, case: RoutingCase) -> dict[str, float]:
    """Nonzero fleet-model variables implied by a multi-bus solution."""
    values: dict[str, float] = {}
    counts_by_bus: dict[str, dict[str, int]] = {}
    for route in solution.routes:
        k = route.bus_id
        for prev, cur in zip(route.sequence, route.sequence[1:]):
            values[f"x|{prev}>{cur}@{k}"] = 1.0
            values[f"w|{prev}>{cur}@{k}"] = float(route.loads[(prev, cur)])
        for n in route.sequence:
            values[f"r|{n}@{k}"] = 1.0
            values[f"t|{n}@{k}"] = route.times[n]
        drops: dict[str, int] = {}
        for s, stop in route.student_stop.items():
            sch = case.school_of[s]
            drops[sch] = drops.get(sch, 0) + 1
            values[f"e|{stop}|{s}@{k}"] = 1.0
            values[f"tau|{stop}|{s}@{k}"] = route.times[stop]
            values[f"p|{s}@{k}"] = route.pickup_s[s]
            values[f"d|{s}@{k}"] = route.dropoff_s[s]
            values[f"kap|{sch}|{s}@{k}"] = route.times[sch]
        counts_by_bus[k] = drops
    for route in solution.routes:
        for sch in case.schools:
            values[f"v|{sch}@{route.bus_id}"] = float(counts_by_bus[route.bus_id].get(sch, 0))
    return values


def validate_route_solution(
    solution: RouteSolution,
    instance: Instance,
    ttm: TravelTimeMatrix,
    tol: float = 1e-6,
):
    """Check a multi-bus solution against the complete fleet formulation."""
    student_ids = sorted(solution.student_assignments())
    fleet = make_fleet_case(instance, ttm, student_ids)
    model = build_fleet_routing_model(fleet)
    values = assemble_fleet_values(solution, fleet.case)
    return model.check(values, tol=tol)
