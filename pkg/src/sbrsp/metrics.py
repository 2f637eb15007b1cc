"""Reported statistics for solutions and scenario comparisons.

Ride time is the student's on-bus time (drop-off minus pick-up). Student
travel time adds the home-to-stop walk at the configured walking speed.
Bus travel time is the route duration from its first stop to the final
depot. The private commute time aggregates car travel of the students
who do not ride. Detour ratio divides a student's ride time by the
direct bus-speed drive from their boarding stop to their school, which
makes it at least one whenever the travel matrix comes from shortest
paths.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InstanceValidationError
from .instance import Instance
from .network import TravelTimeMatrix

PERCENTILES = (25, 50, 75, 80, 85, 90, 95)


@dataclass
class MetricsReport:
    instance_id: str
    scenario: str
    riders: int
    total_ride_min: float
    avg_ride_min: float
    total_travel_min: float
    avg_travel_min: float
    total_walk_min: float
    stop_count: int
    students_per_stop: float
    total_bus_min: float
    avg_bus_min: float
    utilization: float
    total_car_commute_min: float
    detour_ratio: dict[str, float]
    pickup_order: dict[str, int]
    pickup_order_quantile: dict[str, float]
    school_percentiles: dict[str, dict[str, float]]  # school -> {"mean": .., "p25": ..}
    max_ride_by_school_bus: dict[str, dict[str, float]]
    header: dict = field(default_factory=dict)

    def row_values(self) -> dict[str, float]:
        """Scalar metrics as a flat mapping (used by compare and CSV)."""
        return {
            "total_ride_min": self.total_ride_min,
            "avg_ride_min": self.avg_ride_min,
            "total_travel_min": self.total_travel_min,
            "avg_travel_min": self.avg_travel_min,
            "total_walk_min": self.total_walk_min,
            "stop_count": float(self.stop_count),
            "students_per_stop": self.students_per_stop,
            "total_bus_min": self.total_bus_min,
            "avg_bus_min": self.avg_bus_min,
            "utilization": self.utilization,
            "total_car_commute_min": self.total_car_commute_min,
            "riders": float(self.riders),
        }

    def to_dict(self) -> dict:
        out = {
            "instance_id": self.instance_id,
            "scenario": self.scenario,
            "header": self.header,
            **self.row_values(),
            "detour_ratio": self.detour_ratio,
            "pickup_order": self.pickup_order,
            "pickup_order_quantile": self.pickup_order_quantile,
            "school_percentiles": self.school_percentiles,
            "max_ride_by_school_bus": self.max_ride_by_school_bus,
        }
        return out


def _percentile_block(values: list[float]) -> dict[str, float]:
    arr = np.asarray(values, dtype=float)
    block = {"mean": float(arr.mean())}
    for p in PERCENTILES:
        block[f"p{p}"] = float(np.percentile(arr, p))
    return block


def compute_metrics(
    solution,
    instance: Instance,
    walk_m: dict[str, float] | None = None,
    car_time_s: dict[str, float] | None = None,
    ttm: TravelTimeMatrix | None = None,
    scenario: str = "solution",
    validated: bool = True,
) -> MetricsReport:
    """Aggregate a routed solution into the standard report.

    ``walk_m`` maps each rider to their home-to-stop walking distance;
    when omitted it is computed from the solution's assignments.
    ``car_time_s`` supplies car travel times for the non-riders entering
    the private-commute total (empty when everyone rides).
    """
    if not validated:
        raise InstanceValidationError("refusing to report on an unvalidated solution")
    p = instance.params
    assigned = solution.student_assignments()
    riders = sorted(assigned)
    if walk_m is None:
        walk_m = {s: instance.walk_distance(s, assigned[s][1]) for s in riders}

    ride_s = {}
    for route in solution.routes:
        for s, r in route.ride_s.items():
            ride_s[s] = r
    walk_s = {s: walk_m[s] / p.walk_speed_mps for s in riders}
    travel_s = {s: ride_s[s] + walk_s[s] for s in riders}

    stops_used = sorted({stop for _, stop in assigned.values()})
    durations = [route.duration_s for route in solution.routes]

    per_school: dict[str, list[float]] = {}
    for s in riders:
        per_school.setdefault(instance.student_by_id[s].school, []).append(ride_s[s])

    detour = {}
    if ttm is not None:
        for s in riders:
            stop = assigned[s][1]
            school = instance.student_by_id[s].school
            direct = ttm.time(stop, school)
            detour[s] = ride_s[s] / direct if direct > 0 else float("inf")

    pickup_order: dict[str, int] = {}
    pickup_quantile: dict[str, float] = {}
    for route in solution.routes:
        boarded = sorted(route.student_stop, key=lambda s: (route.pickup_s[s], s))
        for pos, s in enumerate(boarded, start=1):
            pickup_order[s] = pos
            pickup_quantile[s] = pos / len(boarded)

    max_ride: dict[str, dict[str, float]] = {}
    for route in solution.routes:
        for s in route.student_stop:
            school = instance.student_by_id[s].school
            bucket = max_ride.setdefault(school, {})
            bucket[route.bus_id] = max(bucket.get(route.bus_id, 0.0), ride_s[s])

    car_total_s = sum((car_time_s or {}).values())
    capacity_total = sum(b.capacity for b in instance.buses)

    n = len(riders)
    report = MetricsReport(
        instance_id=instance_fingerprint(instance),
        scenario=scenario,
        riders=n,
        total_ride_min=sum(ride_s.values()) / 60.0,
        avg_ride_min=(sum(ride_s.values()) / n / 60.0) if n else 0.0,
        total_travel_min=sum(travel_s.values()) / 60.0,
        avg_travel_min=(sum(travel_s.values()) / n / 60.0) if n else 0.0,
        total_walk_min=sum(walk_s.values()) / 60.0,
        stop_count=len(stops_used),
        students_per_stop=(n / len(stops_used)) if stops_used else 0.0,
        total_bus_min=sum(durations) / 60.0,
        avg_bus_min=(sum(durations) / len(durations) / 60.0) if durations else 0.0,
        utilization=n / capacity_total if capacity_total else 0.0,
        total_car_commute_min=car_total_s / 60.0,
        detour_ratio=detour,
        pickup_order=pickup_order,
        pickup_order_quantile=pickup_quantile,
        school_percentiles={m: _percentile_block(v) for m, v in sorted(per_school.items())},
        max_ride_by_school_bus=max_ride,
        header={
            "board_s": [p.board_fixed_s, p.board_per_student_s],
            "deboard_s": [p.deboard_fixed_s, p.deboard_per_student_s],
            "walk_speed_mps": p.walk_speed_mps,
            "max_walk_m": p.max_walk_m,
            "cluster_tol_m2": p.cluster_tol_m2,
            "utilization_definition": "riders / total fleet seat capacity",
        },
    )
    return report


def instance_fingerprint(instance: Instance) -> str:
    """Stable short id of the world (ignores params tweaks)."""
    key = (
        len(instance.students),
        len(instance.stops),
        len(instance.schools),
        len(instance.buses),
        len(instance.network.nodes),
        len(instance.network.edges),
    )
    return "inst-" + "-".join(str(k) for k in key)


@dataclass
class ComparisonRow:
    metric: str
    baseline: float
    candidate: float
    diff: float
    pct: float | None


def compare(report_a: MetricsReport, report_b: MetricsReport) -> list[ComparisonRow]:
    """Delta table between two reports on the same instance.

    ``diff`` is baseline minus candidate and the percentage is relative
    to the baseline, so positive numbers mean the candidate improved on
    metrics where lower is better.
    """
    if report_a.instance_id != report_b.instance_id:
        raise InstanceValidationError(
            f"cannot compare reports from different instances "
            f"({report_a.instance_id} vs {report_b.instance_id})"
        )
    rows = []
    a_vals, b_vals = report_a.row_values(), report_b.row_values()
    for metric in a_vals:
        a, b = a_vals[metric], b_vals[metric]
        diff = a - b
        pct = (diff / a * 100.0) if a != 0 else None
        rows.append(ComparisonRow(metric, a, b, diff, pct))
    return rows


def comparison_csv(rows: list[ComparisonRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["metric", "baseline", "candidate", "diff", "pct"])
    for r in rows:
        writer.writerow([r.metric, f"{r.baseline:.6g}", f"{r.candidate:.6g}", f"{r.diff:.6g}",
                         "" if r.pct is None else f"{r.pct:.2f}"])
    return buf.getvalue()


def report_csv(reports: list[MetricsReport]) -> str:
    """One row per metric, one column per scenario."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["metric"] + [r.scenario for r in reports])
    metrics = list(reports[0].row_values()) if reports else []
    values = [r.row_values() for r in reports]
    for metric in metrics:
        writer.writerow([metric] + [f"{v[metric]:.6g}" for v in values])
    return buf.getvalue()


def report_json(report: MetricsReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True)
