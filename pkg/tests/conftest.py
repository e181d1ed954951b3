import json

import numpy as np
import pandas as pd
import pytest

from crimeflows.ingest import Tract, TractSet


def square_ring(x0, y0, size=1.0):
    return np.array(
        [[x0, y0], [x0 + size, y0], [x0 + size, y0 + size], [x0, y0 + size], [x0, y0]],
        dtype=np.float64,
    )


def make_tract(tract_id, x0, y0, size=1.0, population=1000):
    ring = square_ring(x0, y0, size)
    from crimeflows import geometry

    return Tract(
        tract_id=tract_id,
        rings=(ring,),
        holes=(False,),
        centroid=geometry.polygon_centroid([ring], [False]),
        population=population,
        bbox=geometry.rings_bbox([ring]),
    )


def grid_tracts(w, h, prefix="T", population=1000):
    """w x h grid of unit squares, ids row-major."""
    tracts = []
    for row in range(h):
        for col in range(w):
            tracts.append(
                make_tract(f"{prefix}{row * w + col:03d}", col, row, population=population)
            )
    return TractSet(tracts)


def write_tract_geojson(path, tracts: TractSet):
    features = []
    for t in tracts:
        features.append(
            {
                "type": "Feature",
                "properties": {"tract_id": t.tract_id, "population": t.population},
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [t.rings[0].tolist()],
                },
            }
        )
    with open(path, "w") as fh:
        json.dump({"type": "FeatureCollection", "features": features}, fh)


def ts(s):
    return pd.Timestamp(s, tz="UTC")


def transitions_frame(rows):
    """rows: (user, start, end, src_venue, dst_venue) with ISO strings."""
    return pd.DataFrame(
        {
            "user_key": [r[0] for r in rows],
            "start_ts": pd.to_datetime([r[1] for r in rows], utc=True),
            "end_ts": pd.to_datetime([r[2] for r in rows], utc=True),
            "src_venue": [r[3] for r in rows],
            "dst_venue": [r[4] for r in rows],
        }
    )


def venues_frame(rows):
    """rows: (venue_id, lon, lat, activity_type, tract_id)."""
    return pd.DataFrame(
        {
            "venue_id": [r[0] for r in rows],
            "lon": [float(r[1]) for r in rows],
            "lat": [float(r[2]) for r in rows],
            "category": [r[3] for r in rows],
            "activity_type": [r[3] for r in rows],
            "tract_id": [r[4] for r in rows],
        }
    )


# ---------------------------------------------------------------------------
# Independent oracles
# ---------------------------------------------------------------------------

def enumerate_shortest_paths(neighbors, orig, dest):
    """All minimum-hop paths from orig to dest by exhaustive BFS layering."""
    if orig == dest:
        return [[orig]]
    from collections import deque

    dist = {orig: 0}
    queue = deque([orig])
    while queue:
        v = queue.popleft()
        for u in neighbors[v]:
            if u not in dist:
                dist[u] = dist[v] + 1
                queue.append(u)
    if dest not in dist:
        return []
    paths = []

    def extend(path):
        v = path[-1]
        if v == dest:
            paths.append(list(path))
            return
        for u in neighbors[v]:
            if dist.get(u, -1) == dist[v] + 1 and dist[u] <= dist[dest]:
                path.append(u)
                extend(path)
                path.pop()

    extend([orig])
    return [p for p in paths if len(p) == dist[dest] + 1]


def oracle_route(neighbors, orig, dest):
    """Lexicographically smallest shortest path via full enumeration."""
    paths = enumerate_shortest_paths(neighbors, orig, dest)
    return min(paths) if paths else None


def oracle_pass_through(nodes, neighbors, od_weights):
    """Brute-force pass-through counts: route each OD edge independently."""
    index = {n: i for i, n in enumerate(nodes)}
    counts = np.zeros((len(nodes), 168), dtype=np.int64)
    unreachable = 0
    for (k, l), w in sorted(od_weights.items()):
        path = oracle_route(neighbors, k, l)
        if path is None:
            unreachable += 1
            continue
        for node in path[1:-1]:
            counts[index[node]] += w
    return counts, unreachable


@pytest.fixture
def path4_tracts():
    """1x4 strip of unit squares: path-graph adjacency A-B-C-D."""
    tracts = [make_tract(t, i, 0) for i, t in enumerate("ABCD")]
    return TractSet(tracts)
