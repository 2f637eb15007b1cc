"""Problem data model: world definition, file format, validation, generator.

An instance bundles the road network, schools, students, candidate stops,
the bus fleet and the scalar parameters. All times are seconds and all
distances meters internally; report layers convert to minutes/miles.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import minimum_spanning_tree

from .errors import GenerationError, InstanceValidationError, StrandedStudentError
from .network import (
    Edge,
    Node,
    PathEngine,
    RoadNetwork,
    SnappedLocation,
    snap_point,
)

MODE_ALWAYS = "always"
MODE_SOMETIMES = "sometimes"
MODE_NEVER = "never"
MODE_GROUPS = (MODE_ALWAYS, MODE_SOMETIMES, MODE_NEVER)

MAX_SNAP_M = 500.0
MILES_TO_M = 1609.344


@dataclass(frozen=True)
class School:
    id: str
    x: float
    y: float
    name: str = ""


@dataclass(frozen=True)
class Student:
    id: str
    x: float
    y: float
    school: str
    mode_group: str = MODE_ALWAYS
    car_time_s: float | None = None


@dataclass(frozen=True)
class CandidateStop:
    id: str
    x: float
    y: float


@dataclass(frozen=True)
class Bus:
    id: str
    capacity: int
    cluster_capacity: int

    @classmethod
    def of(cls, id: str, capacity: int, cluster_capacity: int | None = None) -> "Bus":
        return cls(id, capacity, capacity if cluster_capacity is None else cluster_capacity)


@dataclass(frozen=True)
class GlobalParams:
    """Scalar knobs of the optimization and the feedback loop.

    The boarding/deboarding coefficients are linear: a fixed component
    plus a per-student component, applied at stops (boarding) and schools
    (deboarding). Their default values are placeholders recorded in every
    report header; see README.
    """

    max_route_time_s: float = 4020.0
    board_fixed_s: float = 10.0
    board_per_student_s: float = 2.0
    deboard_fixed_s: float = 10.0
    deboard_per_student_s: float = 2.0
    max_walk_m: float = 0.3 * MILES_TO_M
    cluster_tol_m2: float = 100.0
    time_limit_cluster_s: float = 60.0
    time_limit_reduced_s: float = 60.0
    time_limit_full_s: float = 120.0
    mip_gap: float = 1e-4
    bpr_alpha: float = 0.15
    bpr_beta: float = 4.0
    default_capacity_vph: float = 600.0
    peak_window_min: float = 25.0
    walk_speed_mps: float = 1.3
    status_quo_riders: int | None = None

    def validate(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if isinstance(v, (int, float)) and v < 0:
                raise InstanceValidationError(f"params.{f.name} must be non-negative", field=f"params.{f.name}")
        if not self.max_route_time_s > 0:
            raise InstanceValidationError("params.max_route_time_s must be positive", field="params.max_route_time_s")
        if not self.cluster_tol_m2 > 0:
            raise InstanceValidationError("params.cluster_tol_m2 must be positive", field="params.cluster_tol_m2")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if v is not None:
                out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "GlobalParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InstanceValidationError(f"unknown params keys: {sorted(unknown)}", field="params")
        return cls(**data)


class Instance:
    """Validated problem world with derived lookups.

    Immutable by convention after construction; safe to share across
    concurrent workers.
    """

    def __init__(
        self,
        network: RoadNetwork,
        schools: list[School],
        students: list[Student],
        stops: list[CandidateStop],
        buses: list[Bus],
        params: GlobalParams,
    ):
        self.network = network
        self.schools = list(schools)
        self.students = list(students)
        self.stops = list(stops)
        self.buses = list(buses)
        self.params = params

        self.school_by_id = {s.id: s for s in self.schools}
        self.student_by_id = {s.id: s for s in self.students}
        self.stop_by_id = {s.id: s for s in self.stops}
        self.bus_by_id = {b.id: b for b in self.buses}

        self._validate_structure()
        self._snap_all()
        self._walk_engine: PathEngine | None = None
        self._drive_engine: PathEngine | None = None
        self._catchments: dict[str, set[str]] | None = None

    # -- derived engines (built lazily, cached) -------------------------

    @property
    def walk_engine(self) -> PathEngine:
        if self._walk_engine is None:
            self._walk_engine = PathEngine.walking(self.network)
        return self._walk_engine

    @property
    def drive_engine(self) -> PathEngine:
        """Free-flow driving times; congested engines are built by callers."""
        if self._drive_engine is None:
            self._drive_engine = PathEngine.driving(self.network)
        return self._drive_engine

    # -- validation -----------------------------------------------------

    def _validate_structure(self) -> None:
        self.params.validate()
        for name, items, index in (
            ("schools", self.schools, self.school_by_id),
            ("students", self.students, self.student_by_id),
            ("stops", self.stops, self.stop_by_id),
            ("buses", self.buses, self.bus_by_id),
        ):
            if len(index) != len(items):
                raise InstanceValidationError(f"duplicate ids in {name}", field=name)
        if not self.buses:
            raise InstanceValidationError("at least one bus is required", field="buses")
        for b in self.buses:
            if b.capacity < 1 or b.cluster_capacity < 1:
                raise InstanceValidationError(f"bus {b.id} needs capacity >= 1", field=f"buses[{b.id}]")
        for s in self.students:
            if s.school not in self.school_by_id:
                raise InstanceValidationError(
                    f"student {s.id} references unknown school {s.school!r}", field=f"students[{s.id}]"
                )
            if s.mode_group not in MODE_GROUPS:
                raise InstanceValidationError(
                    f"student {s.id} has unknown mode group {s.mode_group!r}", field=f"students[{s.id}]"
                )

    def _snap_all(self) -> None:
        self.school_locs: dict[str, SnappedLocation] = {}
        self.student_locs: dict[str, SnappedLocation] = {}
        self.stop_locs: dict[str, SnappedLocation] = {}
        for collection, out, label in (
            (self.schools, self.school_locs, "schools"),
            (self.students, self.student_locs, "students"),
            (self.stops, self.stop_locs, "stops"),
        ):
            for item in collection:
                loc = snap_point(self.network, item.x, item.y)
                if loc.snap_m > MAX_SNAP_M:
                    raise InstanceValidationError(
                        f"{label[:-1]} {item.id} is {loc.snap_m:.0f} m from the road network "
                        f"(limit {MAX_SNAP_M:.0f} m)",
                        field=f"{label}[{item.id}]",
                    )
                out[item.id] = loc

    def check_walk_access(self) -> None:
        """Every student needs a candidate stop within the walking limit."""
        for s in self.students:
            if not self.catchment(s.id):
                raise StrandedStudentError(
                    f"student {s.id} has no candidate stop within "
                    f"{self.params.max_walk_m:.0f} m walking distance",
                    student_id=s.id,
                )

    def validate(self) -> None:
        """Full validation: structure, snapping, walk access."""
        self.check_walk_access()

    # -- derived sets ----------------------------------------------------

    def school_counts(self, students: list[str] | None = None) -> dict[str, int]:
        """Students per school (bus-riding world or a sub-population)."""
        pool = self.students if students is None else [self.student_by_id[s] for s in students]
        counts = {m.id: 0 for m in self.schools}
        for s in pool:
            counts[s.school] += 1
        return counts

    def mode_set(self, group: str) -> list[str]:
        return [s.id for s in self.students if s.mode_group == group]

    def catchment(self, student_id: str) -> set[str]:
        """Candidate stops within walking distance of the student's home."""
        if self._catchments is None:
            self._catchments = {}
        got = self._catchments.get(student_id)
        if got is None:
            home = self.student_locs[student_id]
            got = {
                sid
                for sid, loc in self.stop_locs.items()
                if self.walk_engine.try_distance(home, loc) <= self.params.max_walk_m + 1e-9
            }
            self._catchments[student_id] = got
        return got

    def walk_distance(self, student_id: str, stop_id: str) -> float:
        return self.walk_engine.distance(self.student_locs[student_id], self.stop_locs[stop_id])

    def status_quo_riders(self) -> int:
        """Target ridership for mode-choice calibration.

        Defaults to the always-riders plus a quarter of the undecided
        group. Bus door-to-door times rarely beat direct car times, so
        the expected-ridership curve tops out near half the undecided
        group; a quarter keeps the default target comfortably reachable
        (it also matches the ridership-to-survey ratios reported for
        real districts).
        """
        if self.params.status_quo_riders is not None:
            return self.params.status_quo_riders
        always = len(self.mode_set(MODE_ALWAYS))
        return always + len(self.mode_set(MODE_SOMETIMES)) // 4

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "network": self.network.to_dict(),
            "schools": [{"id": s.id, "x_m": s.x, "y_m": s.y, "name": s.name} for s in self.schools],
            "students": [
                {
                    "id": s.id,
                    "x_m": s.x,
                    "y_m": s.y,
                    "school": s.school,
                    "mode_group": s.mode_group,
                    **({"car_time_s": s.car_time_s} if s.car_time_s is not None else {}),
                }
                for s in self.students
            ],
            "stops": [{"id": s.id, "x_m": s.x, "y_m": s.y} for s in self.stops],
            "buses": [
                {"id": b.id, "capacity": b.capacity, "cluster_capacity": b.cluster_capacity} for b in self.buses
            ],
            "params": self.params.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Instance":
        if not isinstance(data, dict):
            raise InstanceValidationError("instance JSON root must be an object")
        params = GlobalParams.from_dict(data.get("params", {}))
        network = RoadNetwork.from_dict(data.get("network", {}), params.default_capacity_vph)
        schools = [
            School(str(s["id"]), float(s["x_m"]), float(s["y_m"]), str(s.get("name", "")))
            for s in data.get("schools", [])
        ]
        students = [
            Student(
                str(s["id"]),
                float(s["x_m"]),
                float(s["y_m"]),
                str(s["school"]),
                str(s.get("mode_group", MODE_ALWAYS)).lower(),
                float(s["car_time_s"]) if s.get("car_time_s") is not None else None,
            )
            for s in data.get("students", [])
        ]
        stops = [CandidateStop(str(s["id"]), float(s["x_m"]), float(s["y_m"])) for s in data.get("stops", [])]
        buses = [
            Bus.of(str(b["id"]), int(b["capacity"]), b.get("cluster_capacity"))
            for b in data.get("buses", [])
        ]
        return cls(network, schools, students, stops, buses, params)


def load_instance(path: str | Path) -> Instance:
    """Load, snap and validate an instance file."""
    p = Path(path)
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InstanceValidationError(f"malformed instance file {p}: {exc}") from exc
    inst = Instance.from_dict(data)
    inst.validate()
    return inst


def save_instance(instance: Instance, path: str | Path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(instance_json(instance))
    return p


def instance_json(instance: Instance) -> str:
    return json.dumps(instance.to_dict(), indent=2, sort_keys=True)


# --------------------------------------------------------------------------
# Synthetic generator
# --------------------------------------------------------------------------

NETWORK_STYLES = ("grid", "random-tree", "mixed")


@dataclass(frozen=True)
class GeneratorSpec:
    """Configuration of the seeded synthetic-instance generator."""

    students: int = 60
    schools: int = 3
    stops: int = 24
    buses: int = 4
    network_style: str = "mixed"
    network_nodes: int = 100
    area_m: float = 8000.0
    bus_capacity: int | None = None
    max_route_time_s: float | None = None
    max_walk_m: float = 0.3 * MILES_TO_M
    edge_student_fraction: float = 0.2
    mode_split: tuple[float, float, float] = (0.41, 0.23, 0.36)
    speed_range_mps: tuple[float, float] = (8.0, 14.0)
    extra_edge_fraction: float = 0.04
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "students": self.students,
            "schools": self.schools,
            "stops": self.stops,
            "buses": self.buses,
            "network_style": self.network_style,
            "network_nodes": self.network_nodes,
            "area_m": self.area_m,
            "bus_capacity": self.bus_capacity,
            "max_route_time_s": self.max_route_time_s,
            "max_walk_m": self.max_walk_m,
            "edge_student_fraction": self.edge_student_fraction,
            "mode_split": list(self.mode_split),
            "speed_range_mps": list(self.speed_range_mps),
            "extra_edge_fraction": self.extra_edge_fraction,
            "params": self.params,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorSpec":
        kwargs = dict(data)
        if "mode_split" in kwargs:
            kwargs["mode_split"] = tuple(kwargs["mode_split"])
        if "speed_range_mps" in kwargs:
            kwargs["speed_range_mps"] = tuple(kwargs["speed_range_mps"])
        return cls(**kwargs)


def _grid_network(spec: GeneratorSpec, rng: np.random.Generator) -> RoadNetwork:
    side = max(2, round(math.sqrt(spec.network_nodes)))
    gap = spec.area_m / (side - 1)
    nodes = [
        Node(f"n{r * side + c:03d}", round(c * gap, 3), round(r * gap, 3))
        for r in range(side)
        for c in range(side)
    ]
    edges: list[Edge] = []
    lo, hi = spec.speed_range_mps
    for r in range(side):
        for c in range(side):
            me = f"n{r * side + c:03d}"
            for (rr, cc) in ((r, c + 1), (r + 1, c)):
                if rr < side and cc < side:
                    other = f"n{rr * side + cc:03d}"
                    speed = round(float(rng.uniform(lo, hi)), 3)
                    edges.append(Edge(me, other, round(gap, 3), speed, 600.0))
                    edges.append(Edge(other, me, round(gap, 3), speed, 600.0))
    return RoadNetwork(nodes, edges)


def _scatter_points(n: int, area: float, rng: np.random.Generator) -> np.ndarray:
    pts = rng.uniform(0.0, area, size=(n, 2))
    return np.round(pts, 3)


def _tree_network(spec: GeneratorSpec, rng: np.random.Generator, extra_fraction: float) -> RoadNetwork:
    n = max(4, spec.network_nodes)
    pts = _scatter_points(n, spec.area_m, rng)
    nodes = [Node(f"n{i:03d}", float(pts[i, 0]), float(pts[i, 1])) for i in range(n)]
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    mst = minimum_spanning_tree(coo_matrix(np.triu(dist)))
    pairs = [(int(i), int(j)) for i, j in zip(*mst.nonzero())]
    if extra_fraction > 0:
        # Shortcut edges between close non-adjacent pairs give the slight
        # redundancy of real rural networks (average degree a bit above 2).
        existing = {frozenset(p) for p in pairs}
        order = np.argsort(dist, axis=None)
        wanted = max(1, int(round(extra_fraction * len(pairs))))
        for flat in order:
            i, j = int(flat // n), int(flat % n)
            if i >= j or frozenset((i, j)) in existing:
                continue
            pairs.append((i, j))
            existing.add(frozenset((i, j)))
            wanted -= 1
            if wanted == 0:
                break
    lo, hi = spec.speed_range_mps
    edges: list[Edge] = []
    for i, j in sorted(pairs):
        u, v = f"n{i:03d}", f"n{j:03d}"
        length = round(max(1.0, float(dist[i, j])), 3)
        speed = round(float(rng.uniform(lo, hi)), 3)
        edges.append(Edge(u, v, length, speed, 600.0))
        edges.append(Edge(v, u, length, speed, 600.0))
    return RoadNetwork(nodes, edges)


def _farthest_first(coords: np.ndarray, k: int, rng: np.random.Generator) -> list[int]:
    first = int(rng.integers(len(coords)))
    chosen = [first]
    d = np.sqrt(((coords - coords[first]) ** 2).sum(axis=1))
    while len(chosen) < k:
        nxt = int(np.argmax(d))
        chosen.append(nxt)
        d = np.minimum(d, np.sqrt(((coords - coords[nxt]) ** 2).sum(axis=1)))
    return chosen


def generate_synthetic(spec: GeneratorSpec, seed: int) -> Instance:
    """Deterministic synthetic instance; a pure function of (spec, seed)."""
    if spec.students > 0 and spec.stops <= 0:
        raise GenerationError("cannot place students with zero candidate stops")
    if spec.buses < 1:
        raise GenerationError("fleet size must be at least 1")
    if spec.schools < 1:
        raise GenerationError("at least one school is required")
    if spec.network_style not in NETWORK_STYLES:
        raise GenerationError(f"unknown network style {spec.network_style!r}")

    rng = np.random.default_rng(seed)
    if spec.network_style == "grid":
        network = _grid_network(spec, rng)
    elif spec.network_style == "random-tree":
        network = _tree_network(spec, rng, extra_fraction=0.0)
    else:
        network = _tree_network(spec, rng, extra_fraction=spec.extra_edge_fraction)

    coords = np.array([[n.x, n.y] for n in network.nodes])
    school_nodes = _farthest_first(coords, min(spec.schools, len(coords)), rng)
    if len(school_nodes) < spec.schools:
        raise GenerationError("network too small for the requested school count")
    schools = [
        School(f"school{j + 1}", float(coords[i, 0]), float(coords[i, 1]), name=f"School {j + 1}")
        for j, i in enumerate(school_nodes)
    ]

    remaining = [i for i in range(len(coords)) if i not in set(school_nodes)]
    if spec.stops > len(remaining):
        raise GenerationError(f"requested {spec.stops} stops but only {len(remaining)} free nodes")
    stop_nodes = sorted(rng.choice(remaining, size=spec.stops, replace=False).tolist())
    stops = [
        CandidateStop(f"stop{j + 1:03d}", float(coords[i, 0]), float(coords[i, 1]))
        for j, i in enumerate(stop_nodes)
    ]

    # Student homes are sampled within walking range of the stops so every
    # generated instance satisfies the walk-access precondition.
    walk = PathEngine.walking(network)
    stop_locs = {s.id: snap_point(network, s.x, s.y) for s in stops}
    node_walk = np.full(len(coords), np.inf)
    for loc in stop_locs.values():
        src = network.node_index(loc.node) if loc.node else None
        if src is None:
            continue
        node_walk = np.minimum(node_walk, walk._dist_row(src))
    eligible = [i for i in range(len(coords)) if node_walk[i] <= spec.max_walk_m]
    if not eligible and spec.students > 0:
        raise GenerationError("no network nodes lie within walking distance of any stop")

    students: list[Student] = []
    always, sometimes, _never = spec.mode_split
    seg_by_node: dict[str, list[tuple[str, str, float]]] = {}
    for seg in network._segments:
        seg_by_node.setdefault(seg[0], []).append(seg)
        seg_by_node.setdefault(seg[1], []).append(seg)
    for j in range(spec.students):
        node_i = int(rng.choice(eligible))
        node_id = network.nodes[node_i].id
        x, y = float(coords[node_i, 0]), float(coords[node_i, 1])
        budget = spec.max_walk_m - float(node_walk[node_i])
        if rng.random() < spec.edge_student_fraction and budget > 2.0:
            segs = seg_by_node.get(node_id, [])
            if segs:
                u, v, length = segs[int(rng.integers(len(segs)))]
                off = float(rng.uniform(0.0, min(length, budget) * 0.9))
                ax, ay = network.node_xy(u)
                bx, by = network.node_xy(v)
                t = off / length if node_id == u else 1.0 - off / length
                x, y = round(ax + t * (bx - ax), 3), round(ay + t * (by - ay), 3)
        u = rng.random()
        if u < always:
            mode = MODE_ALWAYS
        elif u < always + sometimes:
            mode = MODE_SOMETIMES
        else:
            mode = MODE_NEVER
        school = schools[int(rng.integers(len(schools)))]
        students.append(Student(f"s{j + 1:04d}", x, y, school.id, mode))

    capacity = spec.bus_capacity
    if capacity is None:
        capacity = max(1, math.ceil(1.3 * spec.students / spec.buses))
    buses = [Bus.of(f"bus{j + 1:02d}", capacity) for j in range(spec.buses)]

    t_max = spec.max_route_time_s
    if t_max is None:
        drive = PathEngine.driving(network)
        all_pts = [stop_locs[s.id] for s in stops] + [snap_point(network, s.x, s.y) for s in schools]
        horizon = 0.0
        if all_pts:
            mat = drive.distance_matrix(all_pts, all_pts)
            finite = mat[np.isfinite(mat)]
            horizon = float(finite.max()) if finite.size else 0.0
        per_bus = math.ceil(spec.students / spec.buses)
        t_max = round(3.0 * horizon + 40.0 * per_bus + 120.0 * spec.schools, 1)

    param_kwargs: dict = {"max_route_time_s": t_max, "max_walk_m": spec.max_walk_m}
    param_kwargs.update(spec.params)
    params = GlobalParams(**param_kwargs)
    inst = Instance(network, schools, students, stops, buses, params)
    inst.validate()
    return inst
