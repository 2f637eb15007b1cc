"""Scripted experiment matrices: ablations and parameter sweeps.

Every run is deterministic under a fixed seed and every emitted row
carries the configuration hash and seed that produced it, so tables can
be regenerated byte-for-byte.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from dataclasses import asdict, dataclass, replace

from .clustering import ClusterOptions, cluster_students
from .errors import (
    CapacityError,
    ModelInfeasibleError,
    SbrspError,
    SolveTimeoutError,
    StrandedStudentError,
)
from .instance import Bus, Instance
from .metrics import compute_metrics
from .network import build_travel_matrix
from .routing import RoutingOptions, make_cluster_context, route_cluster

STATUS_OK = "ok"
STATUS_INFEASIBLE = "Infeasible"
STATUS_NO_SOLUTION = "No sol."
STATUS_NO_SOLUTION_PARTIAL = "No sol.*"


@dataclass(frozen=True)
class AblationConfig:
    """Feature switches of the two-phase pipeline, all on in the base run."""

    name: str
    no_euclidean_kmeans: bool = False
    no_size_reduction: bool = False
    no_road_awareness: bool = False
    keep_school_to_stop_arcs: bool = False
    no_objective_modification: bool = False
    no_preassignment: bool = False
    no_reduced_routing: bool = False

    @property
    def is_base(self) -> bool:
        return not any(
            (
                self.no_euclidean_kmeans,
                self.no_size_reduction,
                self.no_road_awareness,
                self.keep_school_to_stop_arcs,
                self.no_objective_modification,
                self.no_preassignment,
                self.no_reduced_routing,
            )
        )

    def digest(self, seed: int) -> str:
        payload = json.dumps({**asdict(self), "seed": seed}, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:10]

    def cluster_options(self, base: ClusterOptions) -> ClusterOptions:
        return replace(
            base,
            euclidean_start=not self.no_euclidean_kmeans,
            size_reduction=not (self.no_size_reduction or self.no_euclidean_kmeans),
            road_aware=not self.no_road_awareness,
        )

    def routing_options(self, base: RoutingOptions) -> RoutingOptions:
        return replace(
            base,
            use_preassignment=not self.no_preassignment,
            use_reduced=not self.no_reduced_routing,
            reduced_keep_school_to_stop=self.keep_school_to_stop_arcs,
            reduced_ride_time_objective=self.no_objective_modification,
        )


BASE_CONFIG = AblationConfig("base")

STANDARD_CONFIGS = (
    BASE_CONFIG,
    AblationConfig("1-no-euclidean-and-no-size-reduction", no_euclidean_kmeans=True, no_size_reduction=True),
    AblationConfig("2-no-road-awareness", no_road_awareness=True),
    AblationConfig("3-no-size-reduction", no_size_reduction=True),
    AblationConfig("4-keep-school-to-stop-arcs", keep_school_to_stop_arcs=True),
    AblationConfig("5-no-objective-modification", no_objective_modification=True),
    AblationConfig("6-no-preassignment", no_preassignment=True),
    AblationConfig("7-no-reduced-routing", no_reduced_routing=True),
    AblationConfig("8-no-preassignment-no-reduced", no_preassignment=True, no_reduced_routing=True),
)


@dataclass
class AblationRow:
    config: str
    digest: str
    seed: int
    status: str
    objective_s: float | None
    gap_pct: float | None
    wall_s: float
    note: str = ""


def _run_pipeline_collecting(
    instance: Instance,
    seed: int,
    cluster_opts: ClusterOptions,
    routing_opts: RoutingOptions,
) -> tuple[str, float | None, str]:
    """Run cluster+route, collapsing per-cluster failures into a status."""
    try:
        clusters = cluster_students(instance, seed, options=cluster_opts)
    except (SolveTimeoutError, ModelInfeasibleError, CapacityError, StrandedStudentError) as exc:
        return STATUS_INFEASIBLE, None, f"clustering: {exc}"
    ttm = build_travel_matrix(instance.drive_engine, instance.stop_locs, instance.school_locs)
    total = 0.0
    solved = 0
    infeasible = 0
    timed_out = 0
    notes = []
    for k in clusters.buses:
        members = clusters.members(k)
        if not members:
            infeasible += 1
            notes.append(f"{k}: empty cluster")
            continue
        try:
            ctx = make_cluster_context(instance, ttm, k, members, clusters.stop_sets.get(k, ()))
            route, _stats = route_cluster(ctx, routing_opts)
            total += route.objective_s
            solved += 1
        except (ModelInfeasibleError, StrandedStudentError) as exc:
            infeasible += 1
            notes.append(f"{k}: {exc}")
        except SolveTimeoutError as exc:
            timed_out += 1
            notes.append(f"{k}: {exc}")
    n = len(clusters.buses)
    if infeasible:
        return STATUS_INFEASIBLE, None, "; ".join(notes)
    if timed_out == n:
        return STATUS_NO_SOLUTION, None, "; ".join(notes)
    if timed_out:
        return STATUS_NO_SOLUTION_PARTIAL, None, "; ".join(notes)
    return STATUS_OK, total, "; ".join(notes)


def run_ablation(
    instance: Instance,
    configs: tuple[AblationConfig, ...] = STANDARD_CONFIGS,
    seed: int = 0,
    cluster_options: ClusterOptions | None = None,
    routing_options: RoutingOptions | None = None,
) -> list[AblationRow]:
    """Objective and status per configuration, with the gap to the base run."""
    if not any(c.is_base for c in configs):
        raise SbrspError("the ablation matrix needs the base configuration for gap computation")
    cluster_base = cluster_options or ClusterOptions()
    routing_base = routing_options or RoutingOptions.from_instance(instance)

    rows: list[AblationRow] = []
    base_objective: float | None = None
    ordered = sorted(configs, key=lambda c: (not c.is_base,))
    for config in ordered:
        t0 = time.perf_counter()
        status, objective, note = _run_pipeline_collecting(
            instance, seed, config.cluster_options(cluster_base), config.routing_options(routing_base)
        )
        wall = time.perf_counter() - t0
        if config.is_base:
            base_objective = objective
        gap = None
        if objective is not None and base_objective:
            gap = (objective - base_objective) / base_objective * 100.0
        rows.append(
            AblationRow(config.name, config.digest(seed), seed, status, objective, gap, wall, note)
        )
    return rows


def ablation_csv(rows: list[AblationRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["config", "digest", "seed", "status", "objective_s", "gap_pct", "wall_s", "note"])
    for r in rows:
        writer.writerow(
            [
                r.config,
                r.digest,
                r.seed,
                r.status,
                "" if r.objective_s is None else f"{r.objective_s:.3f}",
                "" if r.gap_pct is None else f"{r.gap_pct:.2f}",
                f"{r.wall_s:.2f}",
                r.note,
            ]
        )
    return buf.getvalue()


# --------------------------------------------------------------------------
# Fleet-size sweep
# --------------------------------------------------------------------------


@dataclass
class SweepRow:
    key: float
    status: str
    avg_ride_min: float | None
    avg_travel_min: float | None
    avg_walk_min: float | None
    stop_count: int | None
    digest: str
    seed: int
    note: str = ""


def _with_fleet(instance: Instance, size: int) -> Instance:
    template = instance.buses[0]
    buses = [
        Bus(f"bus{j + 1:02d}", template.capacity, template.cluster_capacity) for j in range(size)
    ]
    return Instance(
        instance.network, instance.schools, instance.students, instance.stops, buses, instance.params
    )


def _with_params(instance: Instance, params) -> Instance:
    return Instance(
        instance.network, instance.schools, instance.students, instance.stops, instance.buses, params
    )


def _solve_and_report(instance: Instance, seed: int, cluster_opts, routing_opts):
    clusters = cluster_students(instance, seed, options=cluster_opts)
    ttm = build_travel_matrix(instance.drive_engine, instance.stop_locs, instance.school_locs)
    from .routing import route_all_clusters

    solution = route_all_clusters(clusters, instance, ttm, routing_opts)
    report = compute_metrics(solution, instance, ttm=ttm)
    return solution, report


def run_fleet_sweep(
    instance: Instance,
    sizes: list[int],
    enforce_route_time_limit: bool = True,
    seed: int = 0,
    cluster_options: ClusterOptions | None = None,
    routing_options: RoutingOptions | None = None,
) -> list[SweepRow]:
    """Average ride/travel time as the fleet grows; infeasible sizes flagged."""
    cluster_opts = cluster_options or ClusterOptions()
    rows = []
    capacity = instance.buses[0].capacity
    n_students = len(instance.students)
    for size in sizes:
        digest = hashlib.sha256(f"fleet|{size}|{seed}|{enforce_route_time_limit}".encode()).hexdigest()[:10]
        if size * capacity < n_students:
            rows.append(SweepRow(size, "infeasible-capacity", None, None, None, None, digest, seed,
                                 f"{size} buses x {capacity} seats < {n_students} students"))
            continue
        trial = _with_fleet(instance, size)
        if not enforce_route_time_limit:
            trial = _with_params(trial, replace(trial.params, max_route_time_s=1e7))
        routing_opts = routing_options or RoutingOptions.from_instance(trial)
        try:
            _, report = _solve_and_report(trial, seed, cluster_opts, routing_opts)
        except (ModelInfeasibleError, CapacityError, StrandedStudentError) as exc:
            rows.append(SweepRow(size, "infeasible", None, None, None, None, digest, seed, str(exc)))
            continue
        except SolveTimeoutError as exc:
            rows.append(SweepRow(size, "no-solution", None, None, None, None, digest, seed, str(exc)))
            continue
        rows.append(
            SweepRow(size, STATUS_OK, report.avg_ride_min, report.avg_travel_min,
                     report.total_walk_min / max(report.riders, 1), report.stop_count, digest, seed)
        )
    return rows


def run_walk_sweep(
    instance: Instance,
    distances_m: list[float],
    seed: int = 0,
    cluster_options: ClusterOptions | None = None,
    routing_options: RoutingOptions | None = None,
) -> list[SweepRow]:
    """Ride/walk/travel averages and stop counts across walking limits."""
    if any(b - a < 0 for a, b in zip(distances_m, distances_m[1:])):
        raise SbrspError("walking distances must be ascending")
    cluster_opts = cluster_options or ClusterOptions()
    rows = []
    for dist in distances_m:
        digest = hashlib.sha256(f"walk|{dist}|{seed}".encode()).hexdigest()[:10]
        trial = _with_params(instance, replace(instance.params, max_walk_m=float(dist)))
        try:
            trial.validate()
        except StrandedStudentError as exc:
            rows.append(SweepRow(dist, "stranded", None, None, None, None, digest, seed, str(exc)))
            continue
        routing_opts = routing_options or RoutingOptions.from_instance(trial)
        try:
            _, report = _solve_and_report(trial, seed, cluster_opts, routing_opts)
        except (ModelInfeasibleError, CapacityError, StrandedStudentError) as exc:
            rows.append(SweepRow(dist, "infeasible", None, None, None, None, digest, seed, str(exc)))
            continue
        except SolveTimeoutError as exc:
            rows.append(SweepRow(dist, "no-solution", None, None, None, None, digest, seed, str(exc)))
            continue
        rows.append(
            SweepRow(dist, STATUS_OK, report.avg_ride_min, report.avg_travel_min,
                     report.total_walk_min / max(report.riders, 1), report.stop_count, digest, seed)
        )
    return rows


def sweep_csv(rows: list[SweepRow], key_name: str) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow([key_name, "status", "avg_ride_min", "avg_travel_min", "avg_walk_min",
                     "stop_count", "digest", "seed", "note"])
    for r in rows:
        writer.writerow([
            r.key, r.status,
            "" if r.avg_ride_min is None else f"{r.avg_ride_min:.3f}",
            "" if r.avg_travel_min is None else f"{r.avg_travel_min:.3f}",
            "" if r.avg_walk_min is None else f"{r.avg_walk_min:.4f}",
            "" if r.stop_count is None else r.stop_count,
            r.digest, r.seed, r.note,
        ])
    return buf.getvalue()
