"""Spatial adjacency, origin-destination, and shortest-path networks.

Transitions between tracts are routed along minimum-hop paths in the
contiguity network. Equal-length paths are broken deterministically in
favor of the lexicographically smallest node-id sequence, and each
distinct (origin, destination) pair is routed exactly once regardless
of how many transitions share it.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import geometry
from .errors import ValidationError
from .ingest import TractSet
from .panel import HOURS_PER_WEEK, hour_of_week_index, local_year

log = logging.getLogger(__name__)


class AdjacencyNetwork:
    """Undirected, unweighted tract contiguity network."""

    def __init__(self, nodes: list[str], edges: set[tuple[str, str]]):
        self.nodes = sorted(nodes)
        self.neighbors: dict[str, list[str]] = {n: [] for n in self.nodes}
        norm = set()
        for a, b in edges:
            if a == b:
                raise ValidationError(f"self-edge on {a!r} is not allowed")
            if a not in self.neighbors or b not in self.neighbors:
                raise ValidationError(f"edge ({a!r}, {b!r}) references unknown node")
            norm.add((min(a, b), max(a, b)))
        for a, b in sorted(norm):
            self.neighbors[a].append(b)
            self.neighbors[b].append(a)
        for n in self.nodes:
            self.neighbors[n].sort()
        self._edges = sorted(norm)

    def edges(self) -> list[tuple[str, str]]:
        return list(self._edges)

    def n_edges(self) -> int:
        return len(self._edges)


def build_queen_adjacency(tracts: TractSet) -> AdjacencyNetwork:
    """Contiguity edges between tracts whose boundaries share >= 1 point."""
    for t in tracts:
        if t.area <= 0:
            raise ValidationError(f"tract {t.tract_id!r} has degenerate zero-area polygon")
    ids = tracts.ids
    edges: set[tuple[str, str]] = set()
    for i, a in enumerate(ids):
        ta = tracts.get(a)
        for b in ids[i + 1:]:
            tb = tracts.get(b)
            if not geometry.bboxes_overlap(ta.bbox, tb.bbox):
                continue
            if geometry.polygons_touch(list(ta.rings), list(tb.rings)):
                edges.add((a, b))
    return AdjacencyNetwork(ids, edges)


def load_custom_adjacency(edge_path, tracts: TractSet) -> AdjacencyNetwork:
    """Adjacency from an explicit edge list (e.g. a transportation map)."""
    edges: set[tuple[str, str]] = set()
    with open(edge_path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#") or line == "tract_a,tract_b":
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 2:
                raise ValidationError(f"{edge_path}: line {lineno}: expected 'tract_a,tract_b'")
            a, b = parts
            if a not in tracts or b not in tracts:
                missing = a if a not in tracts else b
                raise ValidationError(f"{edge_path}: line {lineno}: unknown tract_id {missing!r}")
            if a == b:
                raise ValidationError(f"{edge_path}: line {lineno}: self-edge {a!r} rejected")
            edges.add((min(a, b), max(a, b)))
    if not edges:
        log.warning("%s lists no edges; every OD pair will be unreachable", edge_path)
    return AdjacencyNetwork(tracts.ids, edges)


@dataclass
class ODNetwork:
    """Directed transition counts between tracts, one 168-vector per edge."""

    nodes: list[str]
    weights: dict[tuple[str, str], np.ndarray] = field(default_factory=dict)

    def edges(self) -> list[tuple[str, str]]:
        return sorted(self.weights)

    def total_by_hour(self) -> np.ndarray:
        total = np.zeros(HOURS_PER_WEEK, dtype=np.int64)
        for w in self.weights.values():
            total += w
        return total


def build_od_network(transitions: pd.DataFrame, venues: pd.DataFrame, tracts: TractSet,
                     year: int | None = None, tz: str = "UTC"):
    """Aggregate cross-tract transitions into the directed OD network.

    Weights index the start-time hour-of-week. Same-tract transitions
    are excluded here (the panel counts them as self-loops), as are
    transitions with an endpoint outside the kept tracts.
    """
    venue_tract = venues.set_index("venue_id")["tract_id"].to_dict()
    df = transitions
    if len(df) and year is not None:
        df = df[local_year(df["start_ts"], tz) == year]
    od = ODNetwork(nodes=list(tracts.ids))
    if len(df) == 0:
        return od, {"od_transitions_dropped": 0, "od_selfloops_excluded": 0}
    kept = set(tracts.ids)
    src = df["src_venue"].map(venue_tract)
    dst = df["dst_venue"].map(venue_tract)
    resolvable = src.isin(kept).to_numpy() & dst.isin(kept).to_numpy()
    hours = hour_of_week_index(df["start_ts"], tz)
    same = (src == dst).to_numpy() & resolvable
    take = resolvable & ~same
    counts = (
        pd.DataFrame({"src": src[take], "dst": dst[take], "t": hours[take]})
        .groupby(["src", "dst", "t"], sort=True)
        .size()
    )
    for (k, l, t), n in counts.items():
        w = od.weights.get((k, l))
        if w is None:
            w = od.weights[(k, l)] = np.zeros(HOURS_PER_WEEK, dtype=np.int64)
        w[t] += int(n)
    drops = {
        "od_transitions_dropped": int((~resolvable).sum()),
        "od_selfloops_excluded": int(same.sum()),
    }
    return od, drops


class PathCache:
    """Per-(origin, destination) shortest-path cache over one adjacency network.

    Paths are minimum-hop with the lexicographically smallest node
    sequence among ties, found greedily: from the origin, repeatedly
    step to the smallest-id neighbor that still lies on some shortest
    path (distance-to-destination decreases by one).
    """

    def __init__(self, adj: AdjacencyNetwork):
        self.adj = adj
        self._dist_to: dict[str, dict[str, int]] = {}
        self._paths: dict[tuple[str, str], list[str] | None] = {}
        self.paths_computed = 0

    def _distances_to(self, dest: str) -> dict[str, int]:
        dist = self._dist_to.get(dest)
        if dist is not None:
            return dist
        dist = {dest: 0}
        queue = deque([dest])
        while queue:
            v = queue.popleft()
            for u in self.adj.neighbors[v]:
                if u not in dist:
                    dist[u] = dist[v] + 1
                    queue.append(u)
        self._dist_to[dest] = dist
        return dist

    def path(self, orig: str, dest: str) -> list[str] | None:
        key = (orig, dest)
        if key in self._paths:
            return self._paths[key]
        if orig not in self.adj.neighbors or dest not in self.adj.neighbors:
            raise ValidationError(f"unknown node in path query {key!r}")
        self.paths_computed += 1
        if orig == dest:
            path: list[str] | None = [orig]
        else:
            dist = self._distances_to(dest)
            if orig not in dist:
                path = None
            else:
                path = [orig]
                v = orig
                while v != dest:
                    v = min(u for u in self.adj.neighbors[v] if dist.get(u, -1) == dist[v] - 1)
                    path.append(v)
        self._paths[key] = path
        return path


def shortest_path(adj: AdjacencyNetwork, orig: str, dest: str,
                  cache: PathCache | None = None) -> list[str] | None:
    """Minimum-hop path as a node sequence, or None when unreachable."""
    cache = cache or PathCache(adj)
    return cache.path(orig, dest)


@dataclass
class ShortestPathNetwork:
    """Directed per-hour flow on adjacency edges after path routing."""

    nodes: list[str]
    weights: dict[tuple[str, str], np.ndarray]

    def edges(self) -> list[tuple[str, str]]:
        return sorted(self.weights)

    def total_by_hour(self) -> np.ndarray:
        total = np.zeros(HOURS_PER_WEEK, dtype=np.int64)
        for w in self.weights.values():
            total += w
        return total


@dataclass
class PassThroughCounts:
    """Per (tract, hour-of-week) count of transitions routed through the tract."""

    ids: list[str]
    counts: np.ndarray  # (n_tracts, 168) int64

    def value(self, tract_id: str, t: int) -> int:
        return int(self.counts[self.ids.index(tract_id), t])


def build_shortest_path_network(adj: AdjacencyNetwork, od: ODNetwork,
                                cache: PathCache | None = None):
    """Route every OD edge along its shortest path and accumulate edge weights.

    Every directed adjacency edge starts at weight zero; each OD edge
    adds its full hour-of-week weight vector to every directed edge on
    the chosen path. Unreachable pairs are skipped and counted.
    """
    cache = cache or PathCache(adj)
    weights = {}
    for a, b in adj.edges():
        weights[(a, b)] = np.zeros(HOURS_PER_WEEK, dtype=np.int64)
        weights[(b, a)] = np.zeros(HOURS_PER_WEEK, dtype=np.int64)
    unreachable = 0
    for (k, l) in od.edges():
        path = cache.path(k, l)
        if path is None:
            unreachable += 1
            continue
        w = od.weights[(k, l)]
        for i, j in zip(path[:-1], path[1:]):
            weights[(i, j)] += w
    net = ShortestPathNetwork(nodes=list(adj.nodes), weights=weights)
    return net, {"unreachable_od_pairs": unreachable}


def pass_through_counts(adj: AdjacencyNetwork, od: ODNetwork,
                        cache: PathCache | None = None):
    """Accumulate OD weights onto the interior tracts of each chosen path."""
    cache = cache or PathCache(adj)
    ids = list(adj.nodes)
    index = {tid: i for i, tid in enumerate(ids)}
    counts = np.zeros((len(ids), HOURS_PER_WEEK), dtype=np.int64)
    unreachable = 0
    for (k, l) in od.edges():
        path = cache.path(k, l)
        if path is None:
            unreachable += 1
            continue
        w = od.weights[(k, l)]
        for node in path[1:-1]:
            counts[index[node]] += w
    return PassThroughCounts(ids=ids, counts=counts), {"unreachable_od_pairs": unreachable}


def export_edges(net: ODNetwork | ShortestPathNetwork) -> pd.DataFrame:
    """Plot-ready long-format edge list: src,dst,hour,weight (nonzero only)."""
    rows = {"src": [], "dst": [], "hour": [], "weight": []}
    for (a, b) in net.edges():
        w = net.weights[(a, b)]
        hot = np.nonzero(w)[0]
        rows["src"].extend([a] * len(hot))
        rows["dst"].extend([b] * len(hot))
        rows["hour"].extend(hot.tolist())
        rows["weight"].extend(w[hot].tolist())
    return pd.DataFrame(rows)
