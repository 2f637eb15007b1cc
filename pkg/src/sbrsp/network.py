"""Road-network algorithms and planar geometry for service regions.

The road network is a directed graph with planar (projected meter)
coordinates. Two-way roads are stored as a pair of directed edges. All
shortest-path queries work on *snapped locations*, which are either a
network node or a point part-way along an undirected road segment, so
students and stops do not have to sit exactly on intersections.

Geometry (convex hulls, outward polygon buffering, membership tests) is
implemented directly: regions are small convex rings and the buffering
semantics (containment of the exact offset region, bounded overshoot)
are part of the contract.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra as _csgraph_dijkstra

from .errors import DisconnectedError, InstanceValidationError

ORIGIN = "@origin"
DESTINATION = "@destination"

# Arc classes of the routing node graph, in the order they are laid out.
ARC_FROM_ORIGIN = "origin->stop"
ARC_STOP_STOP = "stop->stop"
ARC_STOP_SCHOOL = "stop->school"
ARC_SCHOOL_SCHOOL = "school->school"
ARC_SCHOOL_STOP = "school->stop"
ARC_TO_DESTINATION = "school->destination"


@dataclass(frozen=True)
class Node:
    id: str
    x: float
    y: float


@dataclass(frozen=True)
class Edge:
    """One directed road segment."""

    u: str
    v: str
    length_m: float
    speed_mps: float
    capacity_vph: float

    @property
    def freeflow_s(self) -> float:
        return self.length_m / self.speed_mps


class RoadNetwork:
    """Directed road graph with coordinate-indexed nodes."""

    def __init__(self, nodes: Sequence[Node], edges: Sequence[Edge]):
        self.nodes = list(nodes)
        self.edges = list(edges)
        self._index = {n.id: i for i, n in enumerate(self.nodes)}
        if len(self._index) != len(self.nodes):
            raise InstanceValidationError("duplicate node ids in road network", field="network.nodes")
        self.validate()
        self._segments = self._build_segments()

    # -- construction / validation -------------------------------------

    def validate(self) -> None:
        for e in self.edges:
            if e.u == e.v:
                raise InstanceValidationError(f"self-loop edge at node {e.u!r}", field="network.edges")
            if e.u not in self._index or e.v not in self._index:
                raise InstanceValidationError(
                    f"edge references unknown node {e.u!r} or {e.v!r}", field="network.edges"
                )
            if not e.length_m > 0:
                raise InstanceValidationError(f"edge {e.u}->{e.v} has non-positive length", field="network.edges")
            if not e.speed_mps > 0:
                raise InstanceValidationError(f"edge {e.u}->{e.v} has non-positive speed", field="network.edges")

    def _build_segments(self) -> list[tuple[str, str, float]]:
        seen: dict[tuple[str, str], float] = {}
        for e in self.edges:
            key = (e.u, e.v) if e.u < e.v else (e.v, e.u)
            # Parallel opposite edges describe the same physical segment;
            # keep the shortest length for snapping purposes.
            prev = seen.get(key)
            if prev is None or e.length_m < prev:
                seen[key] = e.length_m
        return [(u, v, l) for (u, v), l in sorted(seen.items())]

    # -- lookups ---------------------------------------------------------

    def node_index(self, node_id: str) -> int:
        return self._index[node_id]

    def node(self, node_id: str) -> Node:
        return self.nodes[self._index[node_id]]

    def node_xy(self, node_id: str) -> tuple[float, float]:
        n = self.node(node_id)
        return (n.x, n.y)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def average_degree(self) -> float:
        return 2.0 * len(self._segments) / max(1, len(self.nodes))

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "nodes": [{"id": n.id, "x_m": n.x, "y_m": n.y} for n in self.nodes],
            "edges": [
                {
                    "from": e.u,
                    "to": e.v,
                    "length_m": e.length_m,
                    "freeflow_mps": e.speed_mps,
                    "capacity_vph": e.capacity_vph,
                    "oneway": True,
                }
                for e in self.edges
            ],
        }

    @classmethod
    def from_dict(cls, data: dict, default_capacity_vph: float = 600.0) -> "RoadNetwork":
        nodes = [Node(str(n["id"]), float(n["x_m"]), float(n["y_m"])) for n in data.get("nodes", [])]
        edges: list[Edge] = []
        for e in data.get("edges", []):
            u, v = str(e["from"]), str(e["to"])
            length = float(e["length_m"])
            speed = float(e["freeflow_mps"])
            cap = float(e.get("capacity_vph", default_capacity_vph))
            edges.append(Edge(u, v, length, speed, cap))
            if not e.get("oneway", False):
                edges.append(Edge(v, u, length, speed, cap))
        return cls(nodes, edges)


@dataclass(frozen=True)
class SnappedLocation:
    """A point on the road network: a node, or an offset along a segment.

    ``segment`` is the canonical (sorted) undirected node pair and
    ``offset_m`` the distance from the segment's first node. ``snap_m``
    records how far the original coordinate moved when snapping.
    """

    x: float
    y: float
    node: str | None = None
    segment: tuple[str, str] | None = None
    offset_m: float = 0.0
    snap_m: float = 0.0

    def same_point(self, other: "SnappedLocation") -> bool:
        if self.node is not None and other.node is not None:
            return self.node == other.node
        if self.segment is not None and other.segment is not None:
            return self.segment == other.segment and abs(self.offset_m - other.offset_m) <= 1e-9
        return False


def _project_to_segment(px: float, py: float, ax: float, ay: float, bx: float, by: float):
    """Closest point on segment a-b to p; returns (t, x, y, dist)."""
    dx, dy = bx - ax, by - ay
    denom = dx * dx + dy * dy
    t = 0.0 if denom == 0 else max(0.0, min(1.0, ((px - ax) * dx + (py - ay) * dy) / denom))
    cx, cy = ax + t * dx, ay + t * dy
    return t, cx, cy, math.hypot(px - cx, py - cy)


def snap_point(network: RoadNetwork, x: float, y: float, node_tol_m: float = 1e-6) -> SnappedLocation:
    """Snap a planar coordinate to the nearest point on the nearest segment."""
    best = None
    for (u, v, length) in network._segments:
        ax, ay = network.node_xy(u)
        bx, by = network.node_xy(v)
        t, cx, cy, dist = _project_to_segment(x, y, ax, ay, bx, by)
        cand = (dist, u, v, t, cx, cy, length)
        if best is None or cand[0] < best[0]:
            best = cand
    if best is None:
        raise InstanceValidationError("network has no edges to snap to", field="network.edges")
    dist, u, v, t, cx, cy, length = best
    offset = t * length
    if offset <= node_tol_m:
        n = network.node(u)
        return SnappedLocation(n.x, n.y, node=u, snap_m=dist)
    if offset >= length - node_tol_m:
        n = network.node(v)
        return SnappedLocation(n.x, n.y, node=v, snap_m=dist)
    return SnappedLocation(cx, cy, segment=(u, v), offset_m=offset, snap_m=dist)


class PathEngine:
    """Shortest-path queries between snapped locations.

    One engine is built per edge weighting: directed travel times for
    buses and cars (optionally congested), or undirected lengths for
    walking. Node-to-node distances are computed lazily with Dijkstra and
    cached per source node.
    """

    def __init__(self, network: RoadNetwork, weights: dict[int, float], undirected: bool):
        self.network = network
        self.undirected = undirected
        n = network.n_nodes
        # Representative (min-weight) directed edge between each node pair.
        rep: dict[tuple[int, int], tuple[float, int]] = {}

        def offer(ui: int, vi: int, w: float, edge_idx: int) -> None:
            cur = rep.get((ui, vi))
            if cur is None or w < cur[0]:
                rep[(ui, vi)] = (w, edge_idx)

        for idx, e in enumerate(network.edges):
            ui, vi = network.node_index(e.u), network.node_index(e.v)
            w = weights[idx]
            offer(ui, vi, w, idx)
            if undirected:
                offer(vi, ui, w, idx)
        self._rep = rep
        rows = np.fromiter((k[0] for k in rep), dtype=np.int64, count=len(rep))
        cols = np.fromiter((k[1] for k in rep), dtype=np.int64, count=len(rep))
        vals = np.fromiter((v[0] for v in rep.values()), dtype=np.float64, count=len(rep))
        self._graph = csr_matrix((vals, (rows, cols)), shape=(n, n))
        self._dist_cache: dict[int, np.ndarray] = {}
        self._pred_cache: dict[int, np.ndarray] = {}
        self._weights = weights

    # -- weighting helpers -------------------------------------------------

    @classmethod
    def driving(cls, network: RoadNetwork, edge_times_s: Sequence[float] | None = None) -> "PathEngine":
        if edge_times_s is None:
            w = {i: e.freeflow_s for i, e in enumerate(network.edges)}
        else:
            w = {i: float(t) for i, t in enumerate(edge_times_s)}
        return cls(network, w, undirected=False)

    @classmethod
    def walking(cls, network: RoadNetwork) -> "PathEngine":
        return cls(network, {i: e.length_m for i, e in enumerate(network.edges)}, undirected=True)

    # -- node-level Dijkstra ------------------------------------------------

    def _dist_row(self, src: int) -> np.ndarray:
        row = self._dist_cache.get(src)
        if row is None:
            row = _csgraph_dijkstra(self._graph, indices=src)
            self._dist_cache[src] = row
        return row

    def _dist_pred_row(self, src: int) -> tuple[np.ndarray, np.ndarray]:
        if src not in self._pred_cache:
            dist, pred = _csgraph_dijkstra(self._graph, indices=src, return_predecessors=True)
            self._dist_cache[src] = dist
            self._pred_cache[src] = pred
        return self._dist_cache[src], self._pred_cache[src]

    # -- location handling ---------------------------------------------------

    def _segment_weight(self, u: str, v: str) -> float | None:
        """Weight of the best directed edge u->v, or None if absent."""
        key = (self.network.node_index(u), self.network.node_index(v))
        got = self._rep.get(key)
        return None if got is None else got[0]

    def _segment_edge(self, u: str, v: str) -> int | None:
        key = (self.network.node_index(u), self.network.node_index(v))
        got = self._rep.get(key)
        return None if got is None else got[1]

    def _seg_length(self, seg: tuple[str, str]) -> float:
        for (u, v, l) in self.network._segments:
            if (u, v) == seg:
                return l
        raise KeyError(seg)

    def _departures(self, loc: SnappedLocation) -> list[tuple[int, float, int | None]]:
        """(node index, cost to reach it, partial edge index) triples."""
        if loc.node is not None:
            return [(self.network.node_index(loc.node), 0.0, None)]
        u, v = loc.segment  # type: ignore[misc]
        length = self._seg_length(loc.segment)  # type: ignore[arg-type]
        out = []
        w_uv = self._segment_weight(u, v)
        if w_uv is not None:
            out.append((self.network.node_index(v), (length - loc.offset_m) / length * w_uv, self._segment_edge(u, v)))
        w_vu = self._segment_weight(v, u)
        if w_vu is not None:
            out.append((self.network.node_index(u), loc.offset_m / length * w_vu, self._segment_edge(v, u)))
        return out

    def _arrivals(self, loc: SnappedLocation) -> list[tuple[int, float, int | None]]:
        if loc.node is not None:
            return [(self.network.node_index(loc.node), 0.0, None)]
        u, v = loc.segment  # type: ignore[misc]
        length = self._seg_length(loc.segment)  # type: ignore[arg-type]
        out = []
        w_uv = self._segment_weight(u, v)
        if w_uv is not None:
            out.append((self.network.node_index(u), loc.offset_m / length * w_uv, self._segment_edge(u, v)))
        w_vu = self._segment_weight(v, u)
        if w_vu is not None:
            out.append((self.network.node_index(v), (length - loc.offset_m) / length * w_vu, self._segment_edge(v, u)))
        return out

    def _direct(self, a: SnappedLocation, b: SnappedLocation) -> float | None:
        """Travel along a shared segment without passing a node."""
        if a.segment is None or b.segment is None or a.segment != b.segment:
            return None
        u, v = a.segment
        length = self._seg_length(a.segment)
        best = None
        w_uv = self._segment_weight(u, v)
        if w_uv is not None and b.offset_m >= a.offset_m:
            best = (b.offset_m - a.offset_m) / length * w_uv
        w_vu = self._segment_weight(v, u)
        if w_vu is not None and a.offset_m >= b.offset_m:
            cand = (a.offset_m - b.offset_m) / length * w_vu
            best = cand if best is None else min(best, cand)
        return best

    # -- public queries --------------------------------------------------------

    def distance(self, a: SnappedLocation, b: SnappedLocation) -> float:
        """Minimum path weight from a to b; raises if unreachable."""
        if a.same_point(b):
            return 0.0
        best = self._direct(a, b)
        arrivals = self._arrivals(b)
        for src, start_cost, _ in self._departures(a):
            row = self._dist_row(src)
            for dst, end_cost, _ in arrivals:
                total = start_cost + row[dst] + end_cost
                if not math.isinf(total) and (best is None or total < best):
                    best = total
        if best is None or math.isinf(best):
            raise DisconnectedError(f"no path between ({a.x:.1f},{a.y:.1f}) and ({b.x:.1f},{b.y:.1f})")
        return float(best)

    def try_distance(self, a: SnappedLocation, b: SnappedLocation) -> float:
        """Like distance() but returns inf for unreachable pairs."""
        try:
            return self.distance(a, b)
        except DisconnectedError:
            return math.inf

    def distance_matrix(self, from_locs: Sequence[SnappedLocation], to_locs: Sequence[SnappedLocation]) -> np.ndarray:
        out = np.empty((len(from_locs), len(to_locs)))
        for i, a in enumerate(from_locs):
            for j, b in enumerate(to_locs):
                out[i, j] = self.try_distance(a, b)
        return out

    def path_edges(self, a: SnappedLocation, b: SnappedLocation) -> tuple[float, list[int]]:
        """Minimum-weight path and the directed edge indices it traverses.

        Partial first/last segments count as traversed edges. Used to
        load car trips onto links.
        """
        if a.same_point(b):
            return 0.0, []
        best: tuple[float, list[int]] | None = None
        direct = self._direct(a, b)
        if direct is not None:
            u, v = a.segment  # type: ignore[misc]
            edge = self._segment_edge(u, v) if b.offset_m >= a.offset_m else self._segment_edge(v, u)
            best = (direct, [edge] if edge is not None else [])
        arrivals = self._arrivals(b)
        for src, start_cost, start_edge in self._departures(a):
            dist, pred = self._dist_pred_row(src)
            for dst, end_cost, end_edge in arrivals:
                if math.isinf(dist[dst]):
                    continue
                total = start_cost + dist[dst] + end_cost
                if best is not None and total >= best[0]:
                    continue
                chain: list[int] = []
                node = dst
                while node != src:
                    prev = pred[node]
                    if prev < 0:
                        break
                    got = self._rep[(prev, node)]
                    chain.append(got[1])
                    node = prev
                chain.reverse()
                edges = ([start_edge] if start_edge is not None else []) + chain + (
                    [end_edge] if end_edge is not None else []
                )
                best = (total, edges)
        if best is None:
            raise DisconnectedError(f"no path between ({a.x:.1f},{a.y:.1f}) and ({b.x:.1f},{b.y:.1f})")
        return best


# --------------------------------------------------------------------------
# Routing travel-time matrix
# --------------------------------------------------------------------------


@dataclass
class TravelTimeMatrix:
    """Pairwise bus travel times over the routing node set.

    Nodes are ordered origin depot, stops, schools, destination depot.
    ``times[i, j]`` is +inf where no arc class connects i to j. Depot
    arcs (origin->stop and school->destination) cost zero.
    """

    stop_ids: tuple[str, ...]
    school_ids: tuple[str, ...]
    times: np.ndarray

    def __post_init__(self):
        self.node_ids: tuple[str, ...] = (ORIGIN, *self.stop_ids, *self.school_ids, DESTINATION)
        self._idx = {nid: i for i, nid in enumerate(self.node_ids)}
        self._stops = set(self.stop_ids)
        self._schools = set(self.school_ids)

    def index(self, node_id: str) -> int:
        return self._idx[node_id]

    def time(self, i: str, j: str) -> float:
        return float(self.times[self._idx[i], self._idx[j]])

    def arc_class(self, i: str, j: str) -> str | None:
        if i == j:
            return None
        if i == ORIGIN:
            return ARC_FROM_ORIGIN if j in self._stops else None
        if j == DESTINATION:
            return ARC_TO_DESTINATION if i in self._schools else None
        if i == ORIGIN or j == ORIGIN or i == DESTINATION or j == DESTINATION:
            return None
        if i in self._stops:
            return ARC_STOP_STOP if j in self._stops else ARC_STOP_SCHOOL
        if i in self._schools:
            return ARC_SCHOOL_SCHOOL if j in self._schools else ARC_SCHOOL_STOP
        return None

    def arcs(self) -> Iterator[tuple[str, str, str, float]]:
        """All (i, j, arc class, time) tuples of the modeled arc set."""
        for i in self.node_ids:
            for j in self.node_ids:
                cls = self.arc_class(i, j)
                if cls is not None:
                    yield i, j, cls, self.time(i, j)

    def flow_charge(self, node_id: str) -> int:
        """Net outflow requirement: +1 at the origin, -1 at the destination."""
        if node_id == ORIGIN:
            return 1
        if node_id == DESTINATION:
            return -1
        return 0

    def restricted(self, stops: Sequence[str], schools: Sequence[str]) -> "TravelTimeMatrix":
        """Sub-matrix over a subset of stops and schools (order preserved)."""
        keep = [ORIGIN, *stops, *schools, DESTINATION]
        idx = [self._idx[k] for k in keep]
        return TravelTimeMatrix(tuple(stops), tuple(schools), self.times[np.ix_(idx, idx)])


def build_travel_matrix(
    engine: PathEngine,
    stops: dict[str, SnappedLocation],
    schools: dict[str, SnappedLocation],
) -> TravelTimeMatrix:
    """Assemble the routing travel-time matrix from shortest path times."""
    stop_ids = tuple(stops)
    school_ids = tuple(schools)
    locs = [stops[s] for s in stop_ids] + [schools[m] for m in school_ids]
    k = len(locs)
    n = k + 2
    times = np.full((n, n), np.inf)
    phys = engine.distance_matrix(locs, locs)
    ns = len(stop_ids)
    unreachable: list[tuple[str, str]] = []
    ids = list(stop_ids) + list(school_ids)
    for a in range(k):
        for b in range(k):
            if a == b:
                continue
            if math.isinf(phys[a, b]):
                unreachable.append((ids[a], ids[b]))
            times[1 + a, 1 + b] = phys[a, b]
    if unreachable:
        shown = ", ".join(f"{a}->{b}" for a, b in unreachable[:8])
        raise DisconnectedError(
            f"{len(unreachable)} stop/school pairs are unreachable on the road network: {shown}"
        )
    for a in range(ns):
        times[0, 1 + a] = 0.0  # origin -> stop
    for b in range(ns, k):
        times[1 + b, n - 1] = 0.0  # school -> destination
    return TravelTimeMatrix(stop_ids, school_ids, times)


# --------------------------------------------------------------------------
# Convex geometry for service regions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Region:
    """Convex region: polygon ring (counterclockwise), segment, or point."""

    vertices: tuple[tuple[float, float], ...]
    kind: str  # "polygon" | "segment" | "point"

    def contains(self, p: tuple[float, float], tol: float = 1e-6) -> bool:
        x, y = p
        if self.kind == "point":
            vx, vy = self.vertices[0]
            return math.hypot(x - vx, y - vy) <= tol
        if self.kind == "segment":
            (ax, ay), (bx, by) = self.vertices
            _, _, _, dist = _project_to_segment(x, y, ax, ay, bx, by)
            return dist <= tol
        verts = self.vertices
        m = len(verts)
        for i in range(m):
            ax, ay = verts[i]
            bx, by = verts[(i + 1) % m]
            ex, ey = bx - ax, by - ay
            norm = math.hypot(ex, ey)
            # Signed distance to the directed edge; inside is non-negative for CCW rings.
            if ((x - ax) * ey - (y - ay) * ex) / norm > tol:
                return False
        return True


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points: Iterable[tuple[float, float]]) -> Region:
    """Minimal convex region containing the points (monotone chain)."""
    pts = sorted({(float(x), float(y)) for x, y in points})
    if not pts:
        raise ValueError("convex_hull of empty point set")
    if len(pts) == 1:
        return Region((pts[0],), "point")
    lower: list[tuple[float, float]] = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[tuple[float, float]] = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    ring = lower[:-1] + upper[:-1]
    if len(ring) < 3:
        return Region((pts[0], pts[-1]), "segment")
    return Region(tuple(ring), "polygon")


def _offset_disk(radius: float, tol_m: float = 0.5) -> list[tuple[float, float]]:
    """Regular polygon circumscribing a disk, overshoot at most tol_m."""
    if radius <= 0:
        return [(0.0, 0.0)]
    ratio = radius / (radius + tol_m)
    n = max(16, math.ceil(math.pi / math.acos(ratio)))
    n = ((n + 7) // 8) * 8  # keep corner fans symmetric
    rr = radius / math.cos(math.pi / n)
    return [(rr * math.cos(2 * math.pi * i / n), rr * math.sin(2 * math.pi * i / n)) for i in range(n)]


def expand_region(region: Region, distance_m: float) -> Region:
    """Outward buffer of a convex region.

    Implemented as the convex hull of the Minkowski sum with a polygon
    circumscribing the disk of the given radius, so the result always
    contains every point within ``distance_m`` of the region and stays
    convex; the overshoot beyond the exact buffer is below 0.5 m.
    """
    if distance_m < 0:
        raise ValueError("buffer distance must be non-negative")
    if distance_m == 0:
        return region
    disk = _offset_disk(distance_m)
    pts = [(vx + dx, vy + dy) for vx, vy in region.vertices for dx, dy in disk]
    return convex_hull(pts)


@dataclass(frozen=True)
class Subgraph:
    """Induced piece of the road network: node ids plus directed edge indices."""

    nodes: frozenset[str]
    edge_indices: tuple[int, ...]


def restrict_and_largest_component(network: RoadNetwork, region: Region, tol: float = 1e-6) -> Subgraph:
    """Largest weakly-connected component of the network induced by a region.

    A node belongs to the restriction when it lies inside the region
    (boundary-inclusive); an edge belongs when both endpoints do. Ties on
    component size break toward the component holding the smallest node id.
    """
    inside = {n.id for n in network.nodes if region.contains((n.x, n.y), tol)}
    if not inside:
        return Subgraph(frozenset(), ())
    kept = [(i, e) for i, e in enumerate(network.edges) if e.u in inside and e.v in inside]
    adj: dict[str, set[str]] = {nid: set() for nid in inside}
    for _, e in kept:
        adj[e.u].add(e.v)
        adj[e.v].add(e.u)
    seen: set[str] = set()
    best: set[str] | None = None
    for start in sorted(inside):
        if start in seen:
            continue
        comp = {start}
        frontier = [start]
        while frontier:
            cur = frontier.pop()
            for nxt in adj[cur]:
                if nxt not in comp:
                    comp.add(nxt)
                    frontier.append(nxt)
        seen |= comp
        if best is None or len(comp) > len(best) or (len(comp) == len(best) and min(comp) < min(best)):
            best = comp
    assert best is not None
    edges = tuple(i for i, e in kept if e.u in best)
    return Subgraph(frozenset(best), edges)


def walk_catchment(
    walk_engine: PathEngine,
    home: SnappedLocation,
    stops: dict[str, SnappedLocation],
    max_walk_m: float,
) -> set[str]:
    """Stops within network walking distance of a home location."""
    out = set()
    for sid, loc in stops.items():
        if walk_engine.try_distance(home, loc) <= max_walk_m + 1e-9:
            out.add(sid)
    return out
