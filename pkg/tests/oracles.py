"""Independent brute-force oracles used to pin expected values.

Everything here is deliberately written from scratch against the plain
problem statements (path enumeration, exhaustive assignment and
sequencing, subset covers, partition enumeration) so tests never compare
the library against itself.
"""

from __future__ import annotations

import heapq
import itertools
import math
from collections import Counter


def min_time_by_path_enumeration(
    arcs: dict[tuple[str, str], float], start: str, goal: str, max_hops: int = 8
) -> float:
    """Minimum path cost by exhaustive simple-path enumeration."""
    best = math.inf
    out: dict[str, list[tuple[str, float]]] = {}
    for (u, v), w in arcs.items():
        out.setdefault(u, []).append((v, w))

    def walk(node: str, cost: float, seen: frozenset[str], hops: int) -> None:
        nonlocal best
        if cost >= best:
            return
        if node == goal:
            best = cost
            return
        if hops == max_hops:
            return
        for nxt, w in out.get(node, ()):
            if nxt not in seen:
                walk(nxt, cost + w, seen | {nxt}, hops + 1)

    walk(start, 0.0, frozenset([start]), 0)
    return best


def dijkstra_distances(arcs: dict[tuple[str, str], float], source: str) -> dict[str, float]:
    """Plain binary-heap Dijkstra, independent of the library's engine."""
    dist = {source: 0.0}
    heap = [(0.0, source)]
    out: dict[str, list[tuple[str, float]]] = {}
    for (u, v), w in arcs.items():
        out.setdefault(u, []).append((v, w))
    done = set()
    while heap:
        d, node = heapq.heappop(heap)
        if node in done:
            continue
        done.add(node)
        for nxt, w in out.get(node, ()):
            nd = d + w
            if nd < dist.get(nxt, math.inf):
                dist[nxt] = nd
                heapq.heappush(heap, (nd, nxt))
    return dist


def min_cover_size(catchments: dict[str, frozenset[str]], stops: list[str]) -> int:
    """Smallest stop subset covering every student (exhaustive)."""
    for size in range(1, len(stops) + 1):
        for subset in itertools.combinations(stops, size):
            chosen = set(subset)
            if all(c & chosen for c in catchments.values()):
                return size
    raise ValueError("no cover exists")


def best_capacitated_partition(points: list[tuple[float, float]], capacities: list[int]):
    """Exhaustive capacity-feasible partition with optimal (mean) centroids.

    Returns (best squared-distance objective, best assignment tuple).
    Clusters must be non-empty.
    """
    n, k = len(points), len(capacities)
    best = (math.inf, None)
    for assign in itertools.product(range(k), repeat=n):
        counts = Counter(assign)
        if any(counts.get(c, 0) > capacities[c] for c in range(k)):
            continue
        if any(counts.get(c, 0) == 0 for c in range(k)):
            continue
        total = 0.0
        for c in range(k):
            members = [points[i] for i in range(n) if assign[i] == c]
            mx = sum(p[0] for p in members) / len(members)
            my = sum(p[1] for p in members) / len(members)
            total += sum((p[0] - mx) ** 2 + (p[1] - my) ** 2 for p in members)
        if total < best[0] - 1e-12:
            best = (total, assign)
    return best


def components_by_union_find(nodes: list[str], edges: list[tuple[str, str]]) -> list[set[str]]:
    parent = {n: n for n in nodes}

    def find(a: str) -> str:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for u, v in edges:
        ra, rb = find(u), find(v)
        if ra != rb:
            parent[ra] = rb
    groups: dict[str, set[str]] = {}
    for n in nodes:
        groups.setdefault(find(n), set()).add(n)
    return list(groups.values())


# --------------------------------------------------------------------------
# Exhaustive single-bus routing
# --------------------------------------------------------------------------


def _clock(seq, pickups, drops, delta, stops, a1, b1, a2, b2):
    """Times at each visited node plus the depot arrival."""
    t = {seq[0]: 0.0}
    for prev, cur in zip(seq, seq[1:]):
        if prev in stops:
            dwell = a1 + b1 * pickups[prev]
        else:
            dwell = a2 + b2 * drops[prev]
        t[cur] = t[prev] + dwell + delta[(prev, cur)]
    end = t[seq[-1]] + a2 + b2 * drops[seq[-1]]
    return t, end


def exhaustive_bus_route(
    catchments: dict[str, tuple[str, ...]],
    school_of: dict[str, str],
    delta: dict[tuple[str, str], float],
    a1: float,
    b1: float,
    a2: float,
    b2: float,
    capacity: int,
    t_max: float,
):
    """Exact optimum over every assignment and visit order.

    A plan visits each used stop and each attended school exactly once,
    starts at a stop, ends at a school, picks every student up before
    their school, and respects the capacity and the route time budget.
    Returns (best ride-time total, plan) or (None, None) when no plan is
    feasible.
    """
    students = sorted(catchments)
    schools = sorted({school_of[s] for s in students})
    best_value, best_plan = None, None
    memo: dict[tuple, float | None] = {}

    for choice in itertools.product(*(catchments[s] for s in students)):
        pair_counts = Counter((choice[i], school_of[students[i]]) for i in range(len(students)))
        sig = tuple(sorted(pair_counts.items()))
        if sig in memo:
            value = memo[sig]
            if value is not None and (best_value is None or value < best_value - 1e-12):
                best_value = value
                best_plan = dict(zip(students, choice))
            continue
        pickups = Counter(stop for stop, _ in pair_counts.elements())
        drops = Counter(sch for _, sch in pair_counts.elements())
        used = sorted(pickups)
        nodes = used + schools
        stops_set = set(used)
        value = None
        for perm in itertools.permutations(nodes):
            if perm[0] not in stops_set or perm[-1] not in set(schools):
                continue
            pos = {node: idx for idx, node in enumerate(perm)}
            if any(pos[stop] > pos[sch] for (stop, sch) in pair_counts):
                continue
            aboard, ok = 0, True
            for node in perm:
                if node in stops_set:
                    aboard += pickups[node]
                    if aboard > capacity:
                        ok = False
                        break
                else:
                    aboard -= drops[node]
            if not ok:
                continue
            t, end = _clock(perm, pickups, drops, delta, stops_set, a1, b1, a2, b2)
            if end > t_max + 1e-9:
                continue
            total = sum(count * (t[sch] - t[stop]) for (stop, sch), count in pair_counts.items())
            if value is None or total < value - 1e-12:
                value = total
        memo[sig] = value
        if value is not None and (best_value is None or value < best_value - 1e-12):
            best_value = value
            best_plan = dict(zip(students, choice))
    return best_value, best_plan


def exhaustive_reduced_route(
    selected: list[str],
    schools: list[str],
    pickups: dict[str, int],
    drops: dict[str, int],
    delta: dict[tuple[str, str], float],
    a1: float,
    b1: float,
    a2: float,
    b2: float,
    capacity: int,
    t_max: float,
):
    """Exact optimum of the load-weighted travel objective.

    All stops precede all schools (the reduced route shape); the value is
    the on-board head count times the travel time, summed over legs.
    """
    best = None
    total_students = sum(pickups.values())
    if total_students > capacity:
        return None
    for stop_order in itertools.permutations(selected):
        for school_order in itertools.permutations(schools):
            seq = list(stop_order) + list(school_order)
            t, end = _clock(seq, pickups, drops, delta, set(selected), a1, b1, a2, b2)
            if end > t_max + 1e-9:
                continue
            value = 0.0
            aboard = 0
            for prev, cur in zip(seq, seq[1:]):
                aboard = aboard + pickups[prev] if prev in set(selected) else aboard - drops[prev]
                value += aboard * delta[(prev, cur)]
            if best is None or value < best - 1e-12:
                best = value
    return best
