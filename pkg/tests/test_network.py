"""Network shortest paths, travel matrix, and region geometry."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import delta_dict, grid_network, line_network
from oracles import (
    components_by_union_find,
    dijkstra_distances,
    min_time_by_path_enumeration,
)
from sbrsp.errors import DisconnectedError
from sbrsp.network import (
    DESTINATION,
    ORIGIN,
    Edge,
    Node,
    PathEngine,
    Region,
    RoadNetwork,
    build_travel_matrix,
    convex_hull,
    expand_region,
    restrict_and_largest_component,
    snap_point,
    walk_catchment,
)


def random_digraph(rng: np.random.Generator, n: int = 12, extra: int = 18) -> RoadNetwork:
    pts = rng.uniform(0, 1000, size=(n, 2)).round(1)
    nodes = [Node(f"n{i}", float(pts[i, 0]), float(pts[i, 1])) for i in range(n)]
    edges = []
    seen = set()
    # a ring keeps everything reachable, extras add shortcuts
    pairs = [(i, (i + 1) % n) for i in range(n)]
    while len(pairs) < n + extra:
        i, j = int(rng.integers(n)), int(rng.integers(n))
        if i != j and (i, j) not in seen:
            pairs.append((i, j))
            seen.add((i, j))
    for i, j in pairs:
        length = max(1.0, float(np.hypot(*(pts[i] - pts[j]))))
        edges.append(Edge(f"n{i}", f"n{j}", length, float(rng.uniform(5, 15)), 600.0))
    return RoadNetwork(nodes, edges)


class TestShortestTime:
    def test_same_point_is_zero(self):
        net = line_network([0, 100, 200])
        eng = PathEngine.driving(net)
        loc = snap_point(net, 50, 0)
        assert eng.distance(loc, loc) == 0.0

    def test_three_node_line(self):
        net = line_network([0, 100, 200])
        eng = PathEngine.driving(net)
        a, c = snap_point(net, 0, 0), snap_point(net, 200, 0)
        assert eng.distance(a, c) == pytest.approx(20.0)

    def test_matches_path_enumeration_on_random_graphs(self):
        hits = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            net = random_digraph(rng)
            eng = PathEngine.driving(net)
            arcs = {}
            for e in net.edges:
                key = (e.u, e.v)
                arcs[key] = min(arcs.get(key, math.inf), e.freeflow_s)
            a, b = f"n{seed % 12}", f"n{(seed * 7 + 3) % 12}"
            if a == b:
                continue
            expect = min_time_by_path_enumeration(arcs, a, b, max_hops=8)
            got = eng.distance(snap_point(net, *net.node_xy(a)), snap_point(net, *net.node_xy(b)))
            if math.isinf(expect):
                continue  # true shortest path needs more hops; enumeration bound too small
            assert got <= expect + 1e-9
            if got == pytest.approx(expect):
                hits += 1
        assert hits >= 80  # almost all optima fit in 8 hops on these graphs

    def test_disconnected_raises(self):
        nodes = [Node("a", 0, 0), Node("b", 100, 0), Node("c", 500, 0), Node("d", 600, 0)]
        edges = [Edge("a", "b", 100, 10, 600), Edge("b", "a", 100, 10, 600),
                 Edge("c", "d", 100, 10, 600), Edge("d", "c", 100, 10, 600)]
        net = RoadNetwork(nodes, edges)
        eng = PathEngine.driving(net)
        with pytest.raises(DisconnectedError):
            eng.distance(snap_point(net, 0, 0), snap_point(net, 600, 0))

    def test_oneway_asymmetry(self):
        nodes = [Node("a", 0, 0), Node("b", 100, 0)]
        net = RoadNetwork(nodes, [Edge("a", "b", 100, 10, 600)])
        eng = PathEngine.driving(net)
        a, b = snap_point(net, 0, 0), snap_point(net, 100, 0)
        assert eng.distance(a, b) == pytest.approx(10.0)
        with pytest.raises(DisconnectedError):
            eng.distance(b, a)

    def test_midedge_locations(self):
        net = line_network([0, 100, 200])
        eng = PathEngine.driving(net)
        p = snap_point(net, 30, 5)  # snaps onto first segment
        q = snap_point(net, 170, -3)
        assert p.segment is not None and q.segment is not None
        assert eng.distance(p, q) == pytest.approx(14.0)
        assert eng.distance(q, p) == pytest.approx(14.0)

    def test_triangle_inequality_over_node_triples(self):
        rng = np.random.default_rng(5)
        net = random_digraph(rng, n=10, extra=15)
        eng = PathEngine.driving(net)
        locs = [snap_point(net, *net.node_xy(f"n{i}")) for i in range(10)]
        d = eng.distance_matrix(locs, locs)
        for i in range(10):
            for j in range(10):
                for k in range(10):
                    if math.isinf(d[i, j]) or math.isinf(d[i, k]) or math.isinf(d[k, j]):
                        continue
                    assert d[i, j] <= d[i, k] + d[k, j] + 1e-9


class TestTravelMatrix:
    def test_minimal_arcs(self):
        net = line_network([0, 100, 200])
        ttm = build_travel_matrix(
            PathEngine.driving(net),
            {"stop1": snap_point(net, 0, 0)},
            {"sch1": snap_point(net, 200, 0)},
        )
        arcs = {(i, j): (cls, dt) for i, j, cls, dt in ttm.arcs()}
        assert arcs[(ORIGIN, "stop1")][1] == 0.0
        assert arcs[("stop1", "sch1")][1] == pytest.approx(20.0)
        assert arcs[("sch1", DESTINATION)][1] == 0.0
        # the only other modeled arc is the school->stop return
        assert set(arcs) == {(ORIGIN, "stop1"), ("stop1", "sch1"), ("sch1", "stop1"), ("sch1", DESTINATION)}

    def test_arc_class_counts_two_by_two(self):
        net = line_network([0, 100, 200, 300])
        ttm = build_travel_matrix(
            PathEngine.driving(net),
            {"p": snap_point(net, 0, 0), "q": snap_point(net, 100, 0)},
            {"m": snap_point(net, 200, 0), "w": snap_point(net, 300, 0)},
        )
        by_class: dict[str, int] = {}
        for _, _, cls, _ in ttm.arcs():
            by_class[cls] = by_class.get(cls, 0) + 1
        assert by_class == {
            "origin->stop": 2,
            "stop->stop": 2,
            "stop->school": 4,
            "school->school": 2,
            "school->stop": 4,
            "school->destination": 2,
        }

    def test_matches_engine_distances(self):
        for seed in range(50):
            rng = np.random.default_rng(1000 + seed)
            net = random_digraph(rng, n=10, extra=20)
            eng = PathEngine.driving(net)
            stops = {"a": snap_point(net, *net.node_xy("n0")), "b": snap_point(net, *net.node_xy("n3"))}
            schools = {"m": snap_point(net, *net.node_xy("n7"))}
            try:
                ttm = build_travel_matrix(eng, stops, schools)
            except DisconnectedError:
                continue
            assert ttm.time("a", "m") == pytest.approx(eng.distance(stops["a"], schools["m"]))
            assert ttm.time("b", "a") == pytest.approx(eng.distance(stops["b"], stops["a"]))

    def test_unreachable_pair_reports_cut(self):
        nodes = [Node("a", 0, 0), Node("b", 100, 0)]
        net = RoadNetwork(nodes, [Edge("a", "b", 100, 10, 600)])  # one-way only
        with pytest.raises(DisconnectedError):
            build_travel_matrix(
                PathEngine.driving(net),
                {"s": snap_point(net, 100, 0)},
                {"m": snap_point(net, 0, 0)},
            )


class TestConvexHull:
    def test_square_with_center(self):
        r = convex_hull([(0, 0), (1, 0), (1, 1), (0, 1), (0.5, 0.5)])
        assert r.kind == "polygon"
        assert len(r.vertices) == 4
        assert (0.5, 0.5) not in r.vertices

    def test_collinear_gives_segment(self):
        r = convex_hull([(0, 0), (1, 1), (2, 2)])
        assert r.kind == "segment"
        assert set(r.vertices) == {(0, 0), (2, 2)}

    def test_single_point(self):
        r = convex_hull([(3, 4)])
        assert r.kind == "point"

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            convex_hull([])

    @settings(max_examples=150, deadline=None)
    @given(
        st.lists(
            st.tuples(
                st.floats(-1e4, 1e4, allow_nan=False),
                st.floats(-1e4, 1e4, allow_nan=False),
            ),
            min_size=1,
            max_size=24,
        )
    )
    def test_hull_contains_inputs(self, pts):
        region = convex_hull(pts)
        for p in pts:
            assert region.contains(p, tol=1e-6)


class TestExpandRegion:
    def test_zero_distance_is_identity(self):
        r = convex_hull([(0, 0), (10, 0), (0, 10)])
        assert expand_region(r, 0.0) is r

    def test_negative_raises(self):
        with pytest.raises(ValueError):
            expand_region(convex_hull([(0, 0)]), -1.0)

    def test_unit_square_buffer_membership(self):
        r = convex_hull([(0, 0), (1, 0), (1, 1), (0, 1)])
        grown = expand_region(r, 1.0)
        assert grown.contains((-0.5, 0.5))
        assert not grown.contains((-1.6, 0.5))

    def test_point_buffer_approximates_disk_within_a_meter(self):
        r = convex_hull([(0.0, 0.0)])
        d = 483.0
        grown = expand_region(r, d)
        for angle in np.linspace(0, 2 * math.pi, 73):
            inside = (d * 0.999 * math.cos(angle), d * 0.999 * math.sin(angle))
            outside = ((d + 1.0) * math.cos(angle), (d + 1.0) * math.sin(angle))
            assert grown.contains(inside), angle
            assert not grown.contains(outside), angle

    def test_monotone_in_distance(self):
        r = convex_hull([(0, 0), (40, 0), (17, 29)])
        small = expand_region(r, 50.0)
        large = expand_region(r, 120.0)
        rng = np.random.default_rng(2)
        for _ in range(300):
            p = (float(rng.uniform(-200, 250)), float(rng.uniform(-200, 250)))
            if small.contains(p):
                assert large.contains(p)

    def test_segment_region_buffers(self):
        r = convex_hull([(0, 0), (100, 0)])
        grown = expand_region(r, 10.0)
        assert grown.kind == "polygon"
        assert grown.contains((50.0, 9.9))
        assert grown.contains((-9.9, 0.0))
        assert not grown.contains((50.0, 11.5))


class TestRestriction:
    def test_whole_network(self):
        net = grid_network(3)
        region = convex_hull([(-1, -1), (1001, -1), (1001, 1001), (-1, 1001)])
        sub = restrict_and_largest_component(net, region)
        assert len(sub.nodes) == 9

    def test_split_keeps_larger_side(self):
        # Two road pieces (5 and 3 nodes) joined only through a tall
        # detour node outside the region: restriction yields components
        # of sizes 5 and 3 and the 5-node one wins.
        nodes = [Node(f"a{i}", i * 100.0, 0.0) for i in range(5)]
        nodes += [Node(f"b{i}", 600.0 + i * 100.0, 0.0) for i in range(3)]
        nodes.append(Node("tall", 500.0, 5000.0))
        edges = []
        for u, v in [(f"a{i}", f"a{i+1}") for i in range(4)] + [(f"b{i}", f"b{i+1}") for i in range(2)]:
            edges += [Edge(u, v, 100, 10, 600), Edge(v, u, 100, 10, 600)]
        for u, v in [("a4", "tall"), ("tall", "b0")]:
            edges += [Edge(u, v, 5100, 10, 600), Edge(v, u, 5100, 10, 600)]
        net = RoadNetwork(nodes, edges)
        region = convex_hull([(-10, -10), (900, -10), (900, 10), (-10, 10)])
        sub = restrict_and_largest_component(net, region)
        assert sub.nodes == frozenset({"a0", "a1", "a2", "a3", "a4"})

    def test_empty_region(self):
        net = grid_network(3)
        region = convex_hull([(-500, -500)])
        sub = restrict_and_largest_component(net, region)
        assert sub.nodes == frozenset()

    def test_matches_union_find_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            net = random_digraph(rng, n=14, extra=6)
            xs = sorted(rng.uniform(0, 1000, size=2))
            region = convex_hull([(xs[0], -10), (xs[1], -10), (xs[1], 1010), (xs[0], 1010)])
            sub = restrict_and_largest_component(net, region)
            inside = [n.id for n in net.nodes if region.contains((n.x, n.y))]
            kept = [(e.u, e.v) for e in net.edges if e.u in set(inside) and e.v in set(inside)]
            comps = components_by_union_find(inside, kept)
            if not comps:
                assert sub.nodes == frozenset()
                continue
            best = max(comps, key=lambda c: (len(c), [-ord(ch) for ch in min(c)]))
            assert len(sub.nodes) == len(best)

    def test_tie_breaks_to_smallest_node_id(self):
        nodes = [Node("a", 0, 0), Node("b", 100, 0), Node("x", 1000, 0), Node("y", 1100, 0)]
        edges = [Edge("a", "b", 100, 10, 600), Edge("x", "y", 100, 10, 600)]
        net = RoadNetwork(nodes, edges)
        region = convex_hull([(-10, -10), (1200, -10), (1200, 10), (-10, 10)])
        sub = restrict_and_largest_component(net, region)
        assert sub.nodes == frozenset({"a", "b"})


class TestWalkCatchment:
    def test_colocated_stop_included(self):
        net = line_network([0, 100])
        walk = PathEngine.walking(net)
        home = snap_point(net, 0, 0)
        stops = {"s": snap_point(net, 0, 0)}
        assert walk_catchment(walk, home, stops, 0.0) == {"s"}

    def test_walk_limit_excludes_far_stop(self):
        net = line_network([0, 400, 600])
        walk = PathEngine.walking(net)
        home = snap_point(net, 0, 0)
        stops = {"near": snap_point(net, 400, 0), "far": snap_point(net, 600, 0)}
        assert walk_catchment(walk, home, stops, 482.8032) == {"near"}

    def test_walking_ignores_oneway(self):
        nodes = [Node("a", 0, 0), Node("b", 100, 0)]
        net = RoadNetwork(nodes, [Edge("a", "b", 100, 10, 600)])
        walk = PathEngine.walking(net)
        assert walk.distance(snap_point(net, 100, 0), snap_point(net, 0, 0)) == pytest.approx(100.0)

    def test_matches_dijkstra_oracle_on_grid(self):
        net = grid_network(4, gap=250.0)
        walk = PathEngine.walking(net)
        arcs = {}
        for e in net.edges:
            arcs[(e.u, e.v)] = min(arcs.get((e.u, e.v), math.inf), e.length_m)
            arcs[(e.v, e.u)] = min(arcs.get((e.v, e.u), math.inf), e.length_m)
        dist = dijkstra_distances(arcs, "g0_0")
        home = snap_point(net, 0, 0)
        stops = {n.id: snap_point(net, n.x, n.y) for n in net.nodes}
        for limit in (0.0, 250.0, 500.0, 700.0, 1000.0):
            expect = {nid for nid in stops if dist.get(nid, math.inf) <= limit}
            assert walk_catchment(walk, home, stops, limit) == expect
