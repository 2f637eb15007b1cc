"""Phase 1: partition students into per-bus service regions.

The hybrid pipeline runs capacity-constrained Euclidean k-means, shrinks
the follow-up problem by anchoring students that are unambiguously
placed (inside exactly one service region and on its main road
component), re-solves a road-network-aware clustering over the remaining
free students, and finally attaches candidate stops to each bus via
buffered service regions.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CapacityError, StrandedStudentError
from .formulations import build_assignment_model, build_pair_clustering_model, pair_objective
from .instance import Instance
from .milp import SolveOptions, SolveStatus, solve
from .network import Region, convex_hull, expand_region, restrict_and_largest_component


@dataclass
class ClusterOptions:
    max_iterations: int = 100
    time_limit_s: float = 60.0
    mip_gap: float = 1e-4
    require_nonempty: bool = True
    # Pipeline toggles used by the ablation matrix.
    euclidean_start: bool = True
    size_reduction: bool = True
    road_aware: bool = True


@dataclass
class ClusterAssignment:
    """Student partition plus the geometric state of each stage."""

    assignment: dict[str, str]
    buses: tuple[str, ...]
    centroids: dict[str, tuple[float, float]] = field(default_factory=dict)
    regions: dict[str, Region] = field(default_factory=dict)
    expanded_regions: dict[str, Region] = field(default_factory=dict)
    overlap_students: dict[str, frozenset[str]] = field(default_factory=dict)
    anchored_students: dict[str, frozenset[str]] = field(default_factory=dict)
    free_students: frozenset[str] = frozenset()
    stop_sets: dict[str, tuple[str, ...]] = field(default_factory=dict)
    kmeans_iterations: int = 0
    kmeans_converged: bool = True
    pair_cost: float | None = None
    fixed_pair_cost: float | None = None

    def members(self, bus: str) -> tuple[str, ...]:
        return tuple(s for s in sorted(self.assignment) if self.assignment[s] == bus)

    def sizes(self) -> dict[str, int]:
        out = {k: 0 for k in self.buses}
        for k in self.assignment.values():
            out[k] += 1
        return out

    def check_capacities(self, instance: Instance) -> None:
        for k, n in self.sizes().items():
            cap = instance.bus_by_id[k].cluster_capacity
            if n > cap:
                raise CapacityError(f"bus {k} got {n} students over its clustering capacity {cap}")


def _student_coords(instance: Instance, students: list[str]) -> np.ndarray:
    return np.array([[instance.student_locs[s].x, instance.student_locs[s].y] for s in students])


def _kmeanspp_centroids(coords: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Standard distance-squared seeding on the student coordinates."""
    n = len(coords)
    centers = [int(rng.integers(n))]
    for _ in range(1, k):
        d2 = np.min(
            [((coords - coords[c]) ** 2).sum(axis=1) for c in centers], axis=0
        )
        total = float(d2.sum())
        if total <= 0:
            centers.append(int(rng.integers(n)))
            continue
        centers.append(int(rng.choice(n, p=d2 / total)))
    return coords[centers].astype(float)


def euclidean_constrained_kmeans(
    instance: Instance,
    seed: int,
    students: list[str] | None = None,
    options: ClusterOptions | None = None,
) -> ClusterAssignment:
    """Capacity-constrained k-means over student home coordinates.

    Each iteration solves the assignment step exactly (a small MILP) with
    the centroids frozen, then recenters. The loop stops when every
    centroid's squared displacement drops to the configured tolerance, or
    at the iteration cap (reported via ``kmeans_converged``).
    """
    opts = options or ClusterOptions()
    ids = sorted(students if students is not None else [s.id for s in instance.students])
    buses = tuple(b.id for b in instance.buses)
    caps = [instance.bus_by_id[k].cluster_capacity for k in buses]
    if sum(caps) < len(ids):
        raise CapacityError(
            f"clustering capacity {sum(caps)} cannot cover {len(ids)} students"
        )
    if opts.require_nonempty and len(ids) < len(buses):
        raise CapacityError(f"{len(ids)} students cannot keep all {len(buses)} buses non-empty")

    coords = _student_coords(instance, ids)
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_centroids(coords, len(buses), rng)
    tol = instance.params.cluster_tol_m2

    assign_vec = np.zeros(len(ids), dtype=int)
    converged = False
    iterations = 0
    for iterations in range(1, opts.max_iterations + 1):
        d2 = ((coords[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        model = build_assignment_model(d2, caps, require_nonempty=opts.require_nonempty)
        sol = solve(model, SolveOptions(time_limit_s=opts.time_limit_s, mip_gap=0.0))
        if not sol.status.has_solution:
            raise CapacityError(f"k-means assignment step came back {sol.status.value}")
        for si in range(len(ids)):
            for ki in range(len(buses)):
                if sol.value(f"z|{si}|{ki}") > 0.5:
                    assign_vec[si] = ki
                    break
        new_centroids = centroids.copy()
        for ki in range(len(buses)):
            mask = assign_vec == ki
            if mask.any():
                new_centroids[ki] = coords[mask].mean(axis=0)
        shift = ((new_centroids - centroids) ** 2).sum(axis=1)
        centroids = new_centroids
        if float(shift.max()) <= tol:
            converged = True
            break

    assignment = {ids[si]: buses[assign_vec[si]] for si in range(len(ids))}
    out = ClusterAssignment(
        assignment=assignment,
        buses=buses,
        centroids={buses[ki]: (float(centroids[ki, 0]), float(centroids[ki, 1])) for ki in range(len(buses))},
        kmeans_iterations=iterations,
        kmeans_converged=converged,
    )
    out.regions = _hulls(out, instance)
    out.check_capacities(instance)
    return out


def _hulls(assignment: ClusterAssignment, instance: Instance) -> dict[str, Region]:
    regions = {}
    for k in assignment.buses:
        members = assignment.members(k)
        if members:
            regions[k] = convex_hull(
                [(instance.student_locs[s].x, instance.student_locs[s].y) for s in members]
            )
    return regions


def _on_subgraph(instance: Instance, student: str, nodes: frozenset[str], edge_indices: tuple[int, ...]) -> bool:
    loc = instance.student_locs[student]
    if loc.node is not None:
        return loc.node in nodes
    if loc.segment is None:
        return False
    u, v = loc.segment
    for idx in edge_indices:
        e = instance.network.edges[idx]
        if {e.u, e.v} == {u, v}:
            return True
    return False


def compute_free_students(assignment: ClusterAssignment, instance: Instance) -> ClusterAssignment:
    """Split each cluster into overlap, anchored and free students.

    Overlap students sit inside at least one other bus's service region.
    Anchored students are non-overlap students located on the largest
    connected road component inside their own region; they keep their bus
    through the road-aware re-clustering. Everyone else is free.
    """
    regions = _hulls(assignment, instance)
    overlap: dict[str, frozenset[str]] = {}
    anchored: dict[str, frozenset[str]] = {}
    for k in assignment.buses:
        members = assignment.members(k)
        others = [r for kk, r in regions.items() if kk != k]
        in_overlap = set()
        for s in members:
            loc = instance.student_locs[s]
            if any(r.contains((loc.x, loc.y)) for r in others):
                in_overlap.add(s)
        overlap[k] = frozenset(in_overlap)
        region = regions.get(k)
        if region is None:
            anchored[k] = frozenset()
            continue
        sub = restrict_and_largest_component(instance.network, region)
        anchored[k] = frozenset(
            s for s in members if s not in in_overlap and _on_subgraph(instance, s, sub.nodes, sub.edge_indices)
        )
    all_students = set(assignment.assignment)
    fixed = set().union(*anchored.values()) if anchored else set()
    return replace(
        assignment,
        regions=regions,
        overlap_students=overlap,
        anchored_students=anchored,
        free_students=frozenset(all_students - fixed),
    )


def student_pair_times(instance: Instance, students: list[str]) -> dict[tuple[str, str], float]:
    """Directed road travel times between student homes (both orders)."""
    ids = sorted(students)
    locs = [instance.student_locs[s] for s in ids]
    mat = instance.drive_engine.distance_matrix(locs, locs)
    out: dict[tuple[str, str], float] = {}
    for a in range(len(ids)):
        for b in range(len(ids)):
            out[(ids[a], ids[b])] = float(mat[a, b])
    return out


def road_aware_recluster(
    assignment: ClusterAssignment,
    instance: Instance,
    options: ClusterOptions | None = None,
    pair_time: dict[tuple[str, str], float] | None = None,
    use_fixings: bool = True,
    warm_start: bool = True,
) -> ClusterAssignment:
    """Re-cluster by pairwise road travel time, warm-started by the input.

    With fixings enabled, anchored students keep their bus and only the
    free students move. The incoming partition seeds the solver, so the
    within-cluster pair cost never increases.
    """
    opts = options or ClusterOptions()
    ids = sorted(assignment.assignment)
    if pair_time is None:
        pair_time = student_pair_times(instance, ids)
    fixed: dict[str, str] = {}
    if use_fixings:
        for k, members in assignment.anchored_students.items():
            for s in members:
                fixed[s] = k
    caps = {k: instance.bus_by_id[k].cluster_capacity for k in assignment.buses}
    built = build_pair_clustering_model(
        ids,
        list(assignment.buses),
        caps,
        pair_time,
        fixed=fixed,
        warm_partition=dict(assignment.assignment) if warm_start else None,
        require_nonempty=opts.require_nonempty,
    )
    sol = solve(built.model, SolveOptions(time_limit_s=opts.time_limit_s, mip_gap=opts.mip_gap))
    if not sol.status.has_solution:
        from .errors import SolveTimeoutError

        raise SolveTimeoutError(
            f"road-aware clustering ended {sol.status.value} without an incumbent",
            best_bound=sol.best_bound,
        )
    new_assignment: dict[str, str] = {}
    for s in ids:
        for k in assignment.buses:
            if sol.value(f"y|{s}|{k}") > 0.5:
                new_assignment[s] = k
                break
    out = replace(
        assignment,
        assignment=new_assignment,
        pair_cost=pair_objective(new_assignment, pair_time),
        fixed_pair_cost=built.fixed_pair_cost,
    )
    out.regions = _hulls(out, instance)
    out.check_capacities(instance)
    for k, members in assignment.anchored_students.items():
        for s in members:
            assert new_assignment[s] == k, f"anchored student {s} moved off bus {k}"
    return out


def assign_stops_to_clusters(assignment: ClusterAssignment, instance: Instance) -> ClusterAssignment:
    """Attach candidate stops to buses via walk-distance-buffered regions.

    A stop can belong to several buses when expanded regions overlap.
    Every student must retain at least one in-region stop within walking
    distance; otherwise the cluster is unusable and the caller should
    retry with different clustering parameters.
    """
    max_walk = instance.params.max_walk_m
    expanded: dict[str, Region] = {}
    stop_sets: dict[str, tuple[str, ...]] = {}
    for k in assignment.buses:
        region = assignment.regions.get(k)
        if region is None:
            stop_sets[k] = ()
            continue
        grown = expand_region(region, max_walk)
        expanded[k] = grown
        stop_sets[k] = tuple(
            sid for sid in sorted(instance.stop_locs) if grown.contains((instance.stop_locs[sid].x, instance.stop_locs[sid].y))
        )
    for k in assignment.buses:
        stops_k = set(stop_sets.get(k, ()))
        for s in assignment.members(k):
            if not (instance.catchment(s) & stops_k):
                raise StrandedStudentError(
                    f"student {s} of bus {k} has no reachable stop inside the expanded service region",
                    student_id=s,
                    bus_id=k,
                )
    return replace(assignment, expanded_regions=expanded, stop_sets=stop_sets)


def cluster_to_dict(assignment: ClusterAssignment) -> dict:
    def region_dict(r: Region) -> dict:
        return {"kind": r.kind, "vertices": [list(v) for v in r.vertices]}

    return {
        "assignment": dict(sorted(assignment.assignment.items())),
        "buses": list(assignment.buses),
        "stop_sets": {k: list(v) for k, v in sorted(assignment.stop_sets.items())},
        "centroids": {k: list(v) for k, v in sorted(assignment.centroids.items())},
        "regions": {k: region_dict(r) for k, r in sorted(assignment.regions.items())},
        "expanded_regions": {k: region_dict(r) for k, r in sorted(assignment.expanded_regions.items())},
        "free_students": sorted(assignment.free_students),
        "anchored_students": {k: sorted(v) for k, v in sorted(assignment.anchored_students.items())},
        "kmeans_iterations": assignment.kmeans_iterations,
        "kmeans_converged": assignment.kmeans_converged,
        "pair_cost": assignment.pair_cost,
        "fixed_pair_cost": assignment.fixed_pair_cost,
    }


def cluster_from_dict(data: dict) -> ClusterAssignment:
    def region_of(d: dict) -> Region:
        return Region(tuple(tuple(v) for v in d["vertices"]), d["kind"])

    return ClusterAssignment(
        assignment=dict(data["assignment"]),
        buses=tuple(data["buses"]),
        centroids={k: tuple(v) for k, v in data.get("centroids", {}).items()},
        regions={k: region_of(r) for k, r in data.get("regions", {}).items()},
        expanded_regions={k: region_of(r) for k, r in data.get("expanded_regions", {}).items()},
        anchored_students={k: frozenset(v) for k, v in data.get("anchored_students", {}).items()},
        free_students=frozenset(data.get("free_students", [])),
        stop_sets={k: tuple(v) for k, v in data.get("stop_sets", {}).items()},
        kmeans_iterations=data.get("kmeans_iterations", 0),
        kmeans_converged=data.get("kmeans_converged", True),
        pair_cost=data.get("pair_cost"),
        fixed_pair_cost=data.get("fixed_pair_cost"),
    )


def cluster_students(
    instance: Instance,
    seed: int,
    students: list[str] | None = None,
    options: ClusterOptions | None = None,
) -> ClusterAssignment:
    """Full phase-1 pipeline with ablation toggles.

    Base: Euclidean k-means, problem-size reduction, road-aware
    re-clustering over free students, stop attachment. Disabling
    ``road_aware`` stops after k-means; disabling ``size_reduction``
    re-clusters everyone (warm-started); disabling ``euclidean_start``
    solves the road-aware model cold.
    """
    opts = options or ClusterOptions()
    ids = sorted(students if students is not None else [s.id for s in instance.students])

    if not opts.euclidean_start:
        seed_assignment = ClusterAssignment(
            assignment={s: instance.buses[0].id for s in ids},
            buses=tuple(b.id for b in instance.buses),
        )
        out = road_aware_recluster(
            seed_assignment, instance, opts, use_fixings=False, warm_start=False
        )
        return assign_stops_to_clusters(out, instance)

    out = euclidean_constrained_kmeans(instance, seed, ids, opts)
    if opts.road_aware:
        out = compute_free_students(out, instance)
        if opts.size_reduction:
            out = road_aware_recluster(out, instance, opts, use_fixings=True, warm_start=True)
        else:
            out = road_aware_recluster(out, instance, opts, use_fixings=False, warm_start=True)
    return assign_stops_to_clusters(out, instance)
