"""Mode choice, congestion feedback, and the ridership fixed point.

Students split into always-bus, sometimes-bus and never-bus groups; only
the sometimes group re-decides. A logistic choice model on the car/bus
travel-time difference is calibrated so expected ridership matches the
status quo, the top-probability students up to the rider quota take the
bus, the remaining students drive and load the road network, and travel
times are updated with a BPR volume-delay curve. The loop repeats until
the rider set stops changing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .clustering import ClusterOptions, cluster_students
from .errors import CalibrationError
from .instance import MODE_ALWAYS, MODE_NEVER, MODE_SOMETIMES, Instance
from .network import PathEngine, TravelTimeMatrix, build_travel_matrix
from .routing import BusRoute, RouteSolution, RoutingOptions, route_all_clusters


def choice_probability(coefficient: float, car_time_s: float, bus_time_s: float) -> float:
    """Probability of choosing the bus given the travel-time difference."""
    if coefficient < 0:
        raise ValueError("time-sensitivity coefficient must be non-negative")
    return float(expit(coefficient * (car_time_s - bus_time_s)))


@dataclass(frozen=True)
class CalibrationResult:
    coefficient: float
    residual: float  # sum of probabilities minus target at the returned value


def calibrate_coefficient(
    deltas_s: list[float],
    target: float,
    tolerance: float = 0.5,
    grid_size: int = 2048,
) -> CalibrationResult:
    """Fit the time-sensitivity coefficient to hit an expected ridership.

    Solves sum(sigmoid(A * delta)) = target for A >= 0. The left side is
    continuous but not monotone when deltas carry mixed signs, so plain
    bisection may fail to bracket; instead the curve is scanned on a
    geometric grid up to its saturation point, a sign-changing bracket is
    picked, and bisection finishes the job.
    """
    deltas = np.asarray(deltas_s, dtype=float)
    n = len(deltas)

    def total(a: float) -> float:
        if n == 0:
            return 0.0
        return float(expit(a * deltas).sum())

    def gap(a: float) -> float:
        return total(a) - target

    lo_val = total(0.0)
    if abs(gap(0.0)) <= 1e-12:
        return CalibrationResult(0.0, 0.0)
    if n == 0:
        raise CalibrationError(
            f"target {target} unreachable with no undecided students", achievable=(0.0, 0.0)
        )

    scale = float(np.max(np.abs(deltas)))
    if scale == 0.0:
        # Constant left side n/2 for every coefficient.
        residual = lo_val - target
        if abs(residual) <= tolerance:
            return CalibrationResult(0.0, residual)
        raise CalibrationError(
            f"all time differences are zero; expected ridership is fixed at {lo_val}",
            achievable=(lo_val, lo_val),
        )

    a_hi = 1.0 / scale
    for _ in range(200):
        if abs(total(2 * a_hi) - total(a_hi)) <= 0.25:
            break
        a_hi *= 2
    # With mixed signs the net change can stall while individual terms are
    # still moving, so extend the scan until every nonzero delta saturates.
    smallest = float(np.min(np.abs(deltas[deltas != 0.0])))
    a_hi = max(a_hi, 50.0 / smallest)

    grid = np.concatenate(([0.0], np.geomspace(a_hi * 1e-12, a_hi, grid_size)))
    values = np.array([gap(a) for a in grid])

    bracket = None
    for i in range(len(grid) - 1):
        if values[i] == 0.0:
            return CalibrationResult(float(grid[i]), 0.0)
        if values[i] * values[i + 1] < 0:
            bracket = (float(grid[i]), float(grid[i + 1]))
            break
    if bracket is None:
        best = int(np.argmin(np.abs(values)))
        if abs(values[best]) <= tolerance:
            return CalibrationResult(float(grid[best]), float(values[best]))
        reachable = (float(np.min(values) + target), float(np.max(values) + target))
        raise CalibrationError(
            f"target {target} is outside the reachable expected ridership "
            f"[{reachable[0]:.2f}, {reachable[1]:.2f}]",
            achievable=reachable,
        )

    lo, hi = bracket
    glo = gap(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        gmid = gap(mid)
        if gmid == 0.0 or (hi - lo) <= max(1e-18, 1e-14 * hi):
            lo = hi = mid
            break
        if glo * gmid < 0:
            hi = mid
        else:
            lo, glo = mid, gmid
    a_star = 0.5 * (lo + hi)
    residual = gap(a_star)
    if abs(residual) > tolerance:
        raise CalibrationError(
            f"bisection residual {residual:.3f} exceeds the {tolerance} tolerance",
            achievable=(total(0.0), total(grid[-1])),
        )
    return CalibrationResult(float(a_star), float(residual))


def select_riders(
    probabilities: dict[str, float],
    always: list[str],
    never: list[str],
    target_riders: int,
) -> tuple[frozenset[str], float | None]:
    """Admit the always-group plus the top-probability undecided students.

    Ties break toward the smaller student id. Returns the rider set and
    the cutoff probability (the last admitted student's probability).
    """
    quota = target_riders - len(always)
    if quota < 0:
        raise CalibrationError(
            f"status-quo ridership {target_riders} is below the always-bus group size {len(always)}"
        )
    undecided = sorted(probabilities, key=lambda s: (-probabilities[s], s))
    if quota > len(undecided):
        raise CalibrationError(
            f"rider quota {quota} exceeds the {len(undecided)} undecided students"
        )
    admitted = undecided[:quota]
    riders = frozenset(always) | frozenset(admitted)
    assert not (riders & set(never))
    cutoff = probabilities[admitted[-1]] if admitted else None
    return riders, cutoff


# --------------------------------------------------------------------------
# Congestion
# --------------------------------------------------------------------------


def bpr_factor(flow_ratio: float, alpha: float = 0.15, beta: float = 4.0) -> float:
    """Volume-delay multiplier: non-decreasing in the flow/capacity ratio."""
    return 1.0 + alpha * flow_ratio**beta


@dataclass
class CongestionState:
    link_flows: dict[int, int]  # directed edge index -> vehicles per peak window
    edge_times_s: tuple[float, ...]
    engine: PathEngine
    ttm: TravelTimeMatrix


def update_congestion(instance: Instance, car_commuters: list[str]) -> CongestionState:
    """Load car commuters onto their free-flow shortest paths, update times.

    Every commuter adds one vehicle to each link of their home-to-school
    path within the peak window; link times follow the BPR curve, the bus
    travel-time matrix is rebuilt on the congested times. Buses are not
    loaded onto links.
    """
    p = instance.params
    free = instance.drive_engine
    flows: dict[int, int] = {}
    for s in sorted(car_commuters):
        student = instance.student_by_id[s]
        home = instance.student_locs[s]
        school = instance.school_locs[student.school]
        _, edges = free.path_edges(home, school)  # raises DisconnectedError naming nothing useful
        for idx in edges:
            flows[idx] = flows.get(idx, 0) + 1
    window_h = p.peak_window_min / 60.0
    times = []
    for idx, e in enumerate(instance.network.edges):
        flow = flows.get(idx, 0)
        cap_window = max(e.capacity_vph * window_h, 1e-9)
        times.append(e.freeflow_s * bpr_factor(flow / cap_window, p.bpr_alpha, p.bpr_beta))
    engine = PathEngine.driving(instance.network, times)
    ttm = build_travel_matrix(engine, instance.stop_locs, instance.school_locs)
    return CongestionState(flows, tuple(times), engine, ttm)


def car_times(instance: Instance, engine: PathEngine, students: list[str]) -> dict[str, float]:
    out = {}
    for s in students:
        student = instance.student_by_id[s]
        out[s] = engine.distance(instance.student_locs[s], instance.school_locs[student.school])
    return out


# --------------------------------------------------------------------------
# Fixed point
# --------------------------------------------------------------------------


@dataclass
class EquilibriumState:
    iteration: int
    coefficient: float
    residual: float
    car_time_s: dict[str, float]
    bus_time_s: dict[str, float]
    probabilities: dict[str, float]
    cutoff: float | None
    riders: frozenset[str]
    link_flows: dict[int, int]
    total_ride_s: float


@dataclass
class FixedPointResult:
    states: list[EquilibriumState]
    solution: RouteSolution
    converged: bool
    iterations: int

    @property
    def final(self) -> EquilibriumState:
        return self.states[-1]


@dataclass
class FixedPointOptions:
    max_iterations: int = 20
    seed: int = 0
    cluster: ClusterOptions = field(default_factory=ClusterOptions)
    routing: RoutingOptions = field(default_factory=RoutingOptions)


def estimate_bus_times(
    instance: Instance,
    solution: RouteSolution,
    students: list[str],
    free_engine: PathEngine,
) -> dict[str, float]:
    """Anticipated door-to-door bus times for the given students.

    Riders get their scheduled walk-plus-ride time. Non-riders get the
    time via the nearest served stop whose route reaches their school
    after that stop; if no route serves their school from a nearby stop,
    the fallback is the nearest served stop plus the free-flow bus path
    to school.
    """
    speed = instance.params.walk_speed_mps
    assigned = solution.student_assignments()
    served: list[tuple[str, BusRoute]] = []
    for route in solution.routes:
        for stop in route.stops_visited:
            served.append((stop, route))
    out: dict[str, float] = {}
    for s in students:
        if s in assigned:
            bus, stop = assigned[s]
            route = solution.route_of(bus)
            walk = instance.walk_distance(s, stop)
            out[s] = walk / speed + route.ride_s[s]
            continue
        school = instance.student_by_id[s].school
        home = instance.student_locs[s]
        ranked = sorted(
            served,
            key=lambda pair: (instance.walk_engine.try_distance(home, instance.stop_locs[pair[0]]), pair[0]),
        )
        estimate = None
        for stop, route in ranked:
            t_stop = route.times.get(stop)
            t_school = route.times.get(school)
            if t_stop is None or t_school is None or t_school < t_stop:
                continue
            walk = instance.walk_engine.try_distance(home, instance.stop_locs[stop])
            estimate = walk / speed + (t_school - t_stop)
            break
        if estimate is None and ranked:
            stop = ranked[0][0]
            walk = instance.walk_engine.try_distance(home, instance.stop_locs[stop])
            direct = free_engine.distance(instance.stop_locs[stop], instance.school_locs[school])
            estimate = walk / speed + direct
        out[s] = estimate if estimate is not None else float("inf")
    return out


def run_fixed_point(instance: Instance, options: FixedPointOptions | None = None) -> FixedPointResult:
    """Iterate routing, mode choice and congestion to a stable rider set.

    Termination compares rider *sets* between successive iterations
    (stricter than count equality, which it implies). Hitting the
    iteration cap returns the latest state flagged as non-converged.
    """
    opts = options or FixedPointOptions()
    always = sorted(instance.mode_set(MODE_ALWAYS))
    sometimes = sorted(instance.mode_set(MODE_SOMETIMES))
    never = sorted(instance.mode_set(MODE_NEVER))
    target = instance.status_quo_riders()
    quota = target - len(always)
    if quota < 0:
        raise CalibrationError(
            f"status-quo ridership {target} is below the always-bus group size {len(always)}"
        )
    if quota > len(sometimes):
        raise CalibrationError(
            f"rider quota {quota} exceeds the undecided group size {len(sometimes)}"
        )

    riders = frozenset(always) | frozenset(sometimes[:quota])
    engine = instance.drive_engine
    ttm = build_travel_matrix(engine, instance.stop_locs, instance.school_locs)
    link_flows: dict[int, int] = {}

    states: list[EquilibriumState] = []
    solution: RouteSolution | None = None
    converged = False
    iteration = 0
    for iteration in range(1, opts.max_iterations + 1):
        try:
            clusters = cluster_students(instance, opts.seed, students=sorted(riders), options=opts.cluster)
            solution = route_all_clusters(clusters, instance, ttm, opts.routing)
        except Exception as exc:
            exc.args = (f"[iteration {iteration}] {exc.args[0] if exc.args else exc}",) + tuple(exc.args[1:])
            raise
        tcs = car_times(instance, engine, sometimes)
        tbs = estimate_bus_times(instance, solution, sometimes, instance.drive_engine)
        deltas = [tcs[s] - tbs[s] for s in sometimes]
        calib = calibrate_coefficient(deltas, float(quota))
        probs = {
            s: choice_probability(calib.coefficient, tcs[s], tbs[s]) for s in sometimes
        }
        new_riders, cutoff = select_riders(probs, always, never, target)
        states.append(
            EquilibriumState(
                iteration=iteration,
                coefficient=calib.coefficient,
                residual=calib.residual,
                car_time_s=tcs,
                bus_time_s=tbs,
                probabilities=probs,
                cutoff=cutoff,
                riders=new_riders,
                link_flows=dict(link_flows),
                total_ride_s=solution.total_ride_s,
            )
        )
        if new_riders == riders:
            converged = True
            break
        riders = new_riders
        commuters = sorted(set(s.id for s in instance.students) - riders)
        congestion = update_congestion(instance, commuters)
        engine, ttm, link_flows = congestion.engine, congestion.ttm, congestion.link_flows

    assert solution is not None
    return FixedPointResult(states, solution, converged, iteration)
