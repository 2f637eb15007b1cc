"""GeoJSON export of networks, service regions and routes.

Coordinates stay in the instance's projected meter plane; features carry
a ``crs`` property naming the local frame so downstream tooling knows
these are not longitude/latitude pairs.
"""

from __future__ import annotations

import json

from .clustering import ClusterAssignment
from .instance import Instance
from .network import Region
from .routing import RouteSolution

_CRS_NOTE = "local-projected-meters"


def _feature(geometry: dict, properties: dict) -> dict:
    return {"type": "Feature", "geometry": geometry, "properties": {"crs": _CRS_NOTE, **properties}}


def region_geometry(region: Region) -> dict:
    if region.kind == "point":
        return {"type": "Point", "coordinates": list(region.vertices[0])}
    if region.kind == "segment":
        return {"type": "LineString", "coordinates": [list(v) for v in region.vertices]}
    ring = [list(v) for v in region.vertices]
    ring.append(ring[0])
    return {"type": "Polygon", "coordinates": [ring]}


def network_features(instance: Instance) -> list[dict]:
    feats = []
    for e in instance.network.edges:
        a, b = instance.network.node_xy(e.u), instance.network.node_xy(e.v)
        feats.append(
            _feature(
                {"type": "LineString", "coordinates": [list(a), list(b)]},
                {"kind": "road", "from": e.u, "to": e.v, "length_m": e.length_m},
            )
        )
    return feats


def regions_collection(instance: Instance, clusters: ClusterAssignment, include_network: bool = False) -> dict:
    feats = []
    for k in clusters.buses:
        if k in clusters.regions:
            feats.append(
                _feature(region_geometry(clusters.regions[k]), {"kind": "service-region", "bus": k})
            )
        if k in clusters.expanded_regions:
            feats.append(
                _feature(
                    region_geometry(clusters.expanded_regions[k]),
                    {"kind": "expanded-region", "bus": k, "stops": list(clusters.stop_sets.get(k, ()))},
                )
            )
    if include_network:
        feats.extend(network_features(instance))
    return {"type": "FeatureCollection", "features": feats}


def routes_collection(instance: Instance, solution: RouteSolution) -> dict:
    locs = {**instance.stop_locs, **instance.school_locs}
    feats = []
    for route in solution.routes:
        coords = [
            [locs[n].x, locs[n].y] for n in route.sequence if n in locs
        ]
        feats.append(
            _feature(
                {"type": "LineString", "coordinates": coords},
                {
                    "kind": "bus-route",
                    "bus": route.bus_id,
                    "duration_s": route.duration_s,
                    "riders": len(route.student_stop),
                },
            )
        )
    return {"type": "FeatureCollection", "features": feats}


def dumps(collection: dict) -> str:
    return json.dumps(collection, indent=2, sort_keys=True)
