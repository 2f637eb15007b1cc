"""Shared builders for tests: tiny deterministic worlds."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sbrsp.instance import (
    Bus,
    CandidateStop,
    GeneratorSpec,
    GlobalParams,
    Instance,
    School,
    Student,
    generate_synthetic,
)
from sbrsp.network import Edge, Node, PathEngine, RoadNetwork, build_travel_matrix


def line_network(positions: list[float], speed: float = 10.0, capacity_vph: float = 600.0) -> RoadNetwork:
    """Two-way road along the x axis with nodes at the given positions."""
    nodes = [Node(f"n{i}", float(x), 0.0) for i, x in enumerate(positions)]
    edges = []
    for i in range(len(positions) - 1):
        length = float(positions[i + 1] - positions[i])
        edges.append(Edge(f"n{i}", f"n{i + 1}", length, speed, capacity_vph))
        edges.append(Edge(f"n{i + 1}", f"n{i}", length, speed, capacity_vph))
    return RoadNetwork(nodes, edges)


def grid_network(side: int = 4, gap: float = 500.0, speed: float = 10.0) -> RoadNetwork:
    nodes = [
        Node(f"g{r}_{c}", c * gap, r * gap) for r in range(side) for c in range(side)
    ]
    edges = []
    for r in range(side):
        for c in range(side):
            for rr, cc in ((r, c + 1), (r + 1, c)):
                if rr < side and cc < side:
                    u, v = f"g{r}_{c}", f"g{rr}_{cc}"
                    edges.append(Edge(u, v, gap, speed, 600.0))
                    edges.append(Edge(v, u, gap, speed, 600.0))
    return RoadNetwork(nodes, edges)


def simple_instance(
    network: RoadNetwork,
    schools: list[tuple[str, float, float]],
    students: list[tuple[str, float, float, str]],
    stops: list[tuple[str, float, float]],
    buses: list[tuple[str, int]],
    **params,
) -> Instance:
    """Instance from coordinate tuples; every student rides by default."""
    mode = params.pop("mode_groups", {})
    p = GlobalParams(**params) if params else GlobalParams()
    return Instance(
        network,
        [School(i, x, y) for i, x, y in schools],
        [Student(i, x, y, sch, mode.get(i, "always")) for i, x, y, sch in students],
        [CandidateStop(i, x, y) for i, x, y in stops],
        [Bus.of(i, cap) for i, cap in buses],
        p,
    )


def tiny_routing_instance(seed: int, students: int = 5, stops: int = 4, schools: int = 2,
                          buses: int = 1, nodes: int = 24) -> Instance:
    """Seeded small world for oracle comparisons."""
    return generate_synthetic(
        GeneratorSpec(
            students=students,
            schools=schools,
            stops=stops,
            buses=buses,
            network_nodes=nodes,
            network_style="mixed",
            area_m=4000.0,
        ),
        seed,
    )


def delta_dict(ttm) -> dict[tuple[str, str], float]:
    """Plain dict of travel times over stops and schools."""
    ids = list(ttm.stop_ids) + list(ttm.school_ids)
    return {(a, b): ttm.time(a, b) for a in ids for b in ids if a != b}


@pytest.fixture
def forced_route_instance() -> Instance:
    """One student, one stop, one school on a 200 m line."""
    net = line_network([0.0, 100.0, 200.0])
    return simple_instance(
        net,
        schools=[("sch1", 200.0, 0.0)],
        students=[("s1", 0.0, 0.0, "sch1")],
        stops=[("stop1", 0.0, 0.0)],
        buses=[("bus1", 10)],
    )


@pytest.fixture
def travel_matrix_of():
    def build(instance: Instance):
        return build_travel_matrix(instance.drive_engine, instance.stop_locs, instance.school_locs)

    return build
