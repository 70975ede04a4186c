"""Geographic fiber network: nodes, k-nearest-neighbour links, repeaters, stations.

All distances are great-circle (haversine, R = 6371 km). Graphs are treated as
immutable; every builder returns a new :class:`GeoGraph`.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path as FsPath
from typing import Iterable, Sequence

import numpy as np
import shapely
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra
from scipy.spatial import cKDTree

from .satlink import GeoPoint, unit_vectors

EARTH_RADIUS_KM = 6371.0
GRAPH_FORMAT_VERSION = 1
REPEATER_THRESHOLD_KM = 61.7
MAX_SEGMENT_KM = 50.0
GRID_ANCHOR = GeoPoint(24.6, -95.8)
MIN_LINK_KM = 1e-6

ENDPOINT = "endpoint"
INSERTED = "inserted_repeater"

# Coarse outline of the contiguous United States, (lon, lat).
US_OUTLINE = (
    (-124.7, 48.4), (-122.8, 49.0), (-95.2, 49.0), (-94.8, 49.4), (-89.6, 48.0),
    (-84.8, 46.5), (-82.4, 45.3), (-82.5, 42.0), (-79.0, 43.3), (-76.5, 44.2),
    (-74.9, 45.0), (-71.5, 45.0), (-69.2, 47.4), (-67.8, 47.1), (-67.0, 44.8),
    (-70.0, 43.7), (-70.6, 41.6), (-74.0, 40.5), (-75.5, 38.5), (-76.0, 36.9),
    (-75.5, 35.2), (-77.9, 33.9), (-81.0, 31.7), (-80.0, 26.8), (-80.4, 25.2),
    (-81.8, 25.9), (-82.8, 27.9), (-84.3, 30.0), (-86.5, 30.4), (-89.4, 30.2),
    (-89.6, 29.0), (-93.8, 29.7), (-97.2, 27.8), (-97.4, 25.9), (-99.5, 27.5),
    (-101.4, 29.8), (-103.1, 28.9), (-106.5, 31.8), (-108.2, 31.3), (-111.1, 31.3),
    (-114.8, 32.5), (-117.1, 32.5), (-118.5, 34.0), (-120.6, 34.6), (-122.5, 37.5),
    (-123.8, 39.8), (-124.2, 42.0), (-124.1, 46.2),
)


class TopologyError(ValueError):
    pass


class NodeFileError(TopologyError):
    pass


def haversine_km(lat1, lon1, lat2, lon2):
    """Great-circle distance; broadcasts over numpy arrays."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlmb = np.radians(np.asarray(lon2) - np.asarray(lon1))
    a = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


@dataclass(frozen=True)
class NodeRecord:
    id: int
    location: GeoPoint
    kind: str = ENDPOINT
    station: bool = False


@dataclass(frozen=True)
class Link:
    u: int
    v: int
    length_km: float


@dataclass(frozen=True)
class Path:
    nodes: tuple[int, ...]
    length_km: float
    cumulative_km: tuple[float, ...] = field(default=(), repr=False)


@dataclass(frozen=True)
class StationGrid:
    spacing_km: float
    anchor: GeoPoint
    station_node_ids: tuple[int, ...]

    def to_json(self) -> dict:
        return {
            "spacing_km": self.spacing_km,
            "anchor": {"lat": self.anchor.latitude_deg, "lon": self.anchor.longitude_deg},
            "station_ids": list(self.station_node_ids),
        }

    @classmethod
    def from_json(cls, doc: dict) -> StationGrid:
        a = doc["anchor"]
        return cls(float(doc["spacing_km"]), GeoPoint(a["lat"], a["lon"]), tuple(int(i) for i in doc["station_ids"]))


class GeoGraph:
    """Undirected geographic graph with per-link fiber lengths."""

    def __init__(self, nodes: Sequence[NodeRecord], links: Iterable[Link], meta: dict | None = None):
        self.nodes = tuple(nodes)
        for i, n in enumerate(self.nodes):
            if n.id != i:
                raise TopologyError(f"node ids must be dense from 0; position {i} has id {n.id}")
        seen: set[tuple[int, int]] = set()
        canon = []
        for link in links:
            u, v = sorted((int(link.u), int(link.v)))
            if u == v:
                raise TopologyError(f"self-loop at node {u}")
            if (u, v) in seen:
                raise TopologyError(f"duplicate link {u}-{v}")
            if not link.length_km > 0:
                raise TopologyError(f"link {u}-{v} has non-positive length")
            if v >= len(self.nodes):
                raise TopologyError(f"link {u}-{v} references a missing node")
            seen.add((u, v))
            canon.append(Link(u, v, float(link.length_km)))
        self.links = tuple(sorted(canon, key=lambda l: (l.u, l.v)))
        self.meta = dict(meta or {})

    def __len__(self) -> int:
        return len(self.nodes)

    @cached_property
    def lat(self) -> np.ndarray:
        return np.array([n.location.latitude_deg for n in self.nodes])

    @cached_property
    def lon(self) -> np.ndarray:
        return np.array([n.location.longitude_deg for n in self.nodes])

    @cached_property
    def endpoint_ids(self) -> np.ndarray:
        return np.array([n.id for n in self.nodes if n.kind == ENDPOINT], dtype=np.int64)

    @cached_property
    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not self.links:
            return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0)
        u, v, w = zip(*((l.u, l.v, l.length_km) for l in self.links))
        return np.array(u, np.int64), np.array(v, np.int64), np.array(w)

    @cached_property
    def csr(self) -> csr_matrix:
        u, v, w = self.edge_arrays
        n = len(self.nodes)
        m = csr_matrix((np.concatenate([w, w]), (np.concatenate([u, v]), np.concatenate([v, u]))), shape=(n, n))
        m.sort_indices()
        return m

    def degrees(self) -> np.ndarray:
        return np.diff(self.csr.indptr)

    def n_components(self) -> int:
        return int(connected_components(self.csr, directed=False)[0])

    def is_connected(self) -> bool:
        return self.n_components() == 1

    def distance_km(self, a: int, b: int) -> float:
        return float(haversine_km(self.lat[a], self.lon[a], self.lat[b], self.lon[b]))

    def link_length(self, u: int, v: int) -> float:
        row = slice(self.csr.indptr[u], self.csr.indptr[u + 1])
        hit = np.nonzero(self.csr.indices[row] == v)[0]
        if hit.size == 0:
            raise KeyError((u, v))
        return float(self.csr.data[row][hit[0]])

    def with_stations(self, grid: StationGrid) -> GeoGraph:
        ids = set(grid.station_node_ids)
        nodes = [NodeRecord(n.id, n.location, n.kind, n.id in ids) for n in self.nodes]
        meta = dict(self.meta, station_grid=grid.to_json())
        return GeoGraph(nodes, self.links, meta)

    # persistence

    def to_json(self) -> dict:
        return {
            "version": GRAPH_FORMAT_VERSION,
            "nodes": [
                {"id": n.id, "lat": n.location.latitude_deg, "lon": n.location.longitude_deg, "kind": n.kind, "station": n.station}
                for n in self.nodes
            ],
            "links": [{"u": l.u, "v": l.v, "length_km": l.length_km} for l in self.links],
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, doc: dict) -> GeoGraph:
        if doc.get("version") != GRAPH_FORMAT_VERSION:
            raise TopologyError(f"unsupported graph format version {doc.get('version')!r}")
        nodes = [NodeRecord(int(n["id"]), GeoPoint(n["lat"], n["lon"]), n["kind"], bool(n["station"])) for n in doc["nodes"]]
        links = [Link(int(l["u"]), int(l["v"]), float(l["length_km"])) for l in doc["links"]]
        return cls(nodes, links, doc.get("meta", {}))

    def save(self, path: str | FsPath) -> None:
        FsPath(path).write_text(json.dumps(self.to_json(), separators=(",", ":")) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | FsPath) -> GeoGraph:
        return cls.from_json(json.loads(FsPath(path).read_text(encoding="utf-8")))


# --- node ingestion ------------------------------------------------------------------


def load_nodes(path: str | FsPath) -> list[NodeRecord]:
    """Read an ``id,lat,lon`` CSV (decimal degrees)."""
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["id", "lat", "lon"]:
            raise NodeFileError(f"{path}: expected header 'id,lat,lon', got {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise NodeFileError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                nid, lat, lon = int(row[0]), float(row[1]), float(row[2])
            except ValueError as exc:
                raise NodeFileError(f"{path}:{lineno}: {exc}") from None
            try:
                loc = GeoPoint(lat, lon)
            except ValueError as exc:
                raise NodeFileError(f"{path}:{lineno}: {exc}") from None
            if nid != len(records):
                raise NodeFileError(f"{path}:{lineno}: id {nid} breaks dense numbering (expected {len(records)})")
            records.append(NodeRecord(nid, loc))
    return records


def write_nodes(path: str | FsPath, nodes: Sequence[NodeRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "lat", "lon"])
        for n in nodes:
            w.writerow([n.id, repr(n.location.latitude_deg), repr(n.location.longitude_deg)])


def synth_nodes(
    seed: int,
    count: int,
    region: Sequence[tuple[float, float]] = US_OUTLINE,
    cluster_count: int = 60,
    background_fraction: float = 0.25,
) -> list[NodeRecord]:
    """Clustered synthetic node cloud inside ``region`` (a (lon, lat) polygon).

    Points come from a mixture of isotropic Gaussians (sizes 15-150 km, heavy
    tailed weights) plus a uniform rural background.
    """
    if count < 1:
        raise TopologyError("count must be >= 1")
    poly = shapely.Polygon(region)
    if not poly.is_valid or poly.area <= 0:
        raise TopologyError("region polygon is degenerate")
    shapely.prepare(poly)
    rng = np.random.default_rng(seed)
    minx, miny, maxx, maxy = poly.bounds

    def uniform(k: int) -> np.ndarray:
        out = np.empty((0, 2))
        while len(out) < k:
            lon = rng.uniform(minx, maxx, 4 * k)
            # uniform on the sphere within the latitude band
            s = rng.uniform(math.sin(math.radians(miny)), math.sin(math.radians(maxy)), 4 * k)
            lat = np.degrees(np.arcsin(s))
            keep = shapely.contains_xy(poly, lon, lat)
            out = np.vstack([out, np.column_stack([lon[keep], lat[keep]])])
        return out[:k]

    centers = uniform(max(cluster_count, 1))
    weights = rng.pareto(1.2, len(centers)) + 1.0
    weights /= weights.sum()
    sigmas_km = rng.uniform(15.0, 150.0, len(centers))

    n_bg = int(round(background_fraction * count)) if cluster_count > 0 else count
    pts = [uniform(n_bg)] if n_bg else []
    need = count - n_bg
    while need > 0:
        idx = rng.choice(len(centers), size=2 * need, p=weights)
        dy = rng.normal(size=2 * need) * sigmas_km[idx] / 111.195
        lat = centers[idx, 1] + dy
        dx = rng.normal(size=2 * need) * sigmas_km[idx] / (111.195 * np.cos(np.radians(lat)))
        lon = centers[idx, 0] + dx
        keep = shapely.contains_xy(poly, lon, lat)
        got = np.column_stack([lon[keep], lat[keep]])[:need]
        pts.append(got)
        need -= len(got)
    xy = np.vstack(pts)[:count]
    return [NodeRecord(i, GeoPoint(float(lat), float(lon))) for i, (lon, lat) in enumerate(xy)]


# --- construction ---------------------------------------------------------------------


def _tree(lat: np.ndarray, lon: np.ndarray) -> cKDTree:
    # chord distance on the unit sphere is monotone in great-circle distance
    return cKDTree(unit_vectors(lat, lon))


def build_knn_graph(nodes: Sequence[NodeRecord], k: int = 3, meta: dict | None = None) -> GeoGraph:
    """Link every node to its ``k`` nearest neighbours (undirected union)."""
    if k < 1:
        raise TopologyError("k must be >= 1")
    n = len(nodes)
    if n < k + 1:
        raise TopologyError(f"need at least k+1={k + 1} nodes, got {n}")
    lat = np.array([r.location.latitude_deg for r in nodes])
    lon = np.array([r.location.longitude_deg for r in nodes])
    q = min(n, k + 1 + 4)
    _, idx = _tree(lat, lon).query(unit_vectors(lat, lon), k=q)
    edges: dict[tuple[int, int], float] = {}
    for i in range(n):
        cand = idx[i][idx[i] != i]
        d = haversine_km(lat[i], lon[i], lat[cand], lon[cand])
        order = np.lexsort((cand, d))[:k]
        for j, dj in zip(cand[order], d[order]):
            key = (min(i, int(j)), max(i, int(j)))
            edges[key] = max(float(dj), MIN_LINK_KM)
    links = [Link(u, v, w) for (u, v), w in edges.items()]
    return GeoGraph(nodes, links, dict(meta or {}, k=k))


def connect_components(graph: GeoGraph) -> tuple[GeoGraph, list[Link]]:
    """Join components by repeatedly adding the shortest inter-component link."""
    n_comp, labels = connected_components(graph.csr, directed=False)
    if n_comp <= 1:
        return graph, []
    lat, lon = graph.lat, graph.lon
    xyz = unit_vectors(lat, lon)
    members = {c: np.nonzero(labels == c)[0] for c in range(n_comp)}

    def nearest_foreign(c: int) -> tuple[float, int, int]:
        inside = members[c]
        outside = np.nonzero(~np.isin(np.arange(len(lat)), inside))[0]
        dist, j = cKDTree(xyz[outside]).query(xyz[inside], k=1)
        best = int(np.argmin(dist))
        u, v = int(inside[best]), int(outside[j[best]])
        return float(haversine_km(lat[u], lon[u], lat[v], lon[v])), min(u, v), max(u, v)

    best = {c: nearest_foreign(c) for c in members}
    added: list[Link] = []
    while len(members) > 1:
        c = min(best, key=lambda k: best[k])
        d, u, v = best[c]
        cu, cv = labels[u], labels[v]
        added.append(Link(u, v, max(d, MIN_LINK_KM)))
        merged = np.concatenate([members.pop(cu), members.pop(cv)])
        best.pop(cu)
        best.pop(cv)
        labels[merged] = cu
        members[cu] = merged
        if len(members) > 1:
            best[cu] = nearest_foreign(cu)
    meta = dict(graph.meta, augmentation_links=len(added))
    return GeoGraph(graph.nodes, list(graph.links) + added, meta), added


def _slerp(a: np.ndarray, b: np.ndarray, f: np.ndarray) -> np.ndarray:
    omega = math.acos(max(-1.0, min(1.0, float(np.dot(a, b)))))
    if omega < 1e-15:
        return np.repeat(a[None, :], len(f), axis=0)
    s = math.sin(omega)
    return (np.sin((1 - f) * omega)[:, None] * a + np.sin(f * omega)[:, None] * b) / s


def insert_intermediate_repeaters(
    graph: GeoGraph, threshold_km: float = REPEATER_THRESHOLD_KM, max_segment_km: float = MAX_SEGMENT_KM
) -> GeoGraph:
    """Split links longer than ``threshold_km`` into equal great-circle pieces <= ``max_segment_km``."""
    if not threshold_km > 0 or not max_segment_km > 0:
        raise TopologyError("threshold_km and max_segment_km must be > 0")
    nodes = list(graph.nodes)
    links: list[Link] = []
    xyz = unit_vectors(graph.lat, graph.lon)
    split = 0
    for link in graph.links:
        if link.length_km <= threshold_km:
            links.append(link)
            continue
        split += 1
        m = math.ceil(link.length_km / max_segment_km)
        pts = _slerp(xyz[link.u], xyz[link.v], np.arange(1, m) / m)
        chain = [link.u]
        for p in pts:
            lat = math.degrees(math.asin(max(-1.0, min(1.0, p[2]))))
            lon = math.degrees(math.atan2(p[1], p[0]))
            nodes.append(NodeRecord(len(nodes), GeoPoint(lat, lon), INSERTED))
            chain.append(len(nodes) - 1)
        chain.append(link.v)
        for a, b in zip(chain[:-1], chain[1:]):
            la, lb = nodes[a].location, nodes[b].location
            d = float(haversine_km(la.latitude_deg, la.longitude_deg, lb.latitude_deg, lb.longitude_deg))
            links.append(Link(a, b, max(d, MIN_LINK_KM)))
    meta = dict(graph.meta, threshold_km=threshold_km, max_segment_km=max_segment_km,
                subdivided_links=split, links_before_subdivision=len(graph.links))
    return GeoGraph(nodes, links, meta)


def build_network(
    nodes: Sequence[NodeRecord],
    k: int = 3,
    threshold_km: float = REPEATER_THRESHOLD_KM,
    max_segment_km: float = MAX_SEGMENT_KM,
    meta: dict | None = None,
) -> GeoGraph:
    """k-NN links, component augmentation, then repeater insertion."""
    g = build_knn_graph(nodes, k, meta)
    g, _ = connect_components(g)
    return insert_intermediate_repeaters(g, threshold_km, max_segment_km)


# --- stations -----------------------------------------------------------------------------


def project_km(lat, lon, anchor: GeoPoint) -> tuple[np.ndarray, np.ndarray]:
    """Equirectangular (x east, y north) km coordinates about ``anchor``."""
    k = math.pi / 180.0 * EARTH_RADIUS_KM
    x = (np.asarray(lon) - anchor.longitude_deg) * k * math.cos(math.radians(anchor.latitude_deg))
    y = (np.asarray(lat) - anchor.latitude_deg) * k
    return x, y


def unproject_km(x, y, anchor: GeoPoint) -> tuple[np.ndarray, np.ndarray]:
    k = math.pi / 180.0 * EARTH_RADIUS_KM
    lat = anchor.latitude_deg + np.asarray(y) / k
    lon = anchor.longitude_deg + np.asarray(x) / (k * math.cos(math.radians(anchor.latitude_deg)))
    return lat, lon


def place_station_grid(graph: GeoGraph, spacing_km: float, anchor: GeoPoint = GRID_ANCHOR) -> StationGrid:
    """Snap the intersections of a square grid to their nearest endpoint nodes.

    ``spacing_km == 0`` puts a station on every endpoint node. Intersections
    whose nearest node is farther than ``spacing / sqrt(2)`` are dropped.
    """
    if spacing_km < 0:
        raise TopologyError("spacing_km must be >= 0")
    ends = graph.endpoint_ids
    if spacing_km == 0:
        return StationGrid(0.0, anchor, tuple(int(i) for i in ends))
    x, y = project_km(graph.lat[ends], graph.lon[ends], anchor)
    i_range = np.arange(math.floor(x.min() / spacing_km), math.ceil(x.max() / spacing_km) + 1)
    j_range = np.arange(math.floor(y.min() / spacing_km), math.ceil(y.max() / spacing_km) + 1)
    gi, gj = np.meshgrid(i_range, j_range, indexing="ij")
    glat, glon = unproject_km(gi.ravel() * spacing_km, gj.ravel() * spacing_km, anchor)
    ok = (np.abs(glat) <= 90.0) & (np.abs(glon) <= 180.0)
    glat, glon = glat[ok], glon[ok]
    _, nearest = _tree(graph.lat[ends], graph.lon[ends]).query(unit_vectors(glat, glon), k=1)
    d = haversine_km(glat, glon, graph.lat[ends[nearest]], graph.lon[ends[nearest]])
    keep = d <= spacing_km / math.sqrt(2.0)
    ids = sorted({int(ends[j]) for j in nearest[keep]})
    return StationGrid(float(spacing_km), anchor, tuple(ids))


# --- routing ---------------------------------------------------------------------------------


def distances_from(graph: GeoGraph, sources: Sequence[int] | int) -> np.ndarray:
    return dijkstra(graph.csr, directed=False, indices=sources)


def path_from_distances(graph: GeoGraph, a: int, b: int, dist_a: np.ndarray, dist_b: np.ndarray) -> Path:
    """Lexicographically smallest shortest path, walking the shortest-path DAG from ``a``."""
    total = float(dist_a[b])
    if not math.isfinite(total):
        raise TopologyError(f"node {b} unreachable from {a}")
    tol = 1e-9 * max(total, 1.0)
    indptr, indices, data = graph.csr.indptr, graph.csr.indices, graph.csr.data
    nodes = [a]
    cum = [0.0]
    u = a
    while u != b:
        row = slice(indptr[u], indptr[u + 1])
        nbr, w = indices[row], data[row]
        ok = np.nonzero(np.abs(cum[-1] + w + dist_b[nbr] - total) <= tol)[0]
        if ok.size == 0 or len(nodes) > len(graph):
            raise TopologyError(f"shortest-path reconstruction failed between {a} and {b}")
        j = ok[0]  # neighbours are sorted by id
        u = int(nbr[j])
        nodes.append(u)
        cum.append(cum[-1] + float(w[j]))
    return Path(tuple(nodes), cum[-1], tuple(cum))


def shortest_path(graph: GeoGraph, a: int, b: int) -> Path:
    if a == b:
        return Path((a,), 0.0, (0.0,))
    d = distances_from(graph, [a, b])
    return path_from_distances(graph, a, b, d[0], d[1])


class StationIndex:
    """Fiber distances from every station, for nearest-station queries."""

    def __init__(self, graph: GeoGraph, grid: StationGrid):
        if not grid.station_node_ids:
            raise TopologyError("station grid is empty")
        self.graph = graph
        self.grid = grid
        self.stations = np.array(sorted(grid.station_node_ids), dtype=np.int64)
        self.every_node = set(grid.station_node_ids) >= set(int(i) for i in graph.endpoint_ids)
        self._dist = None if self.every_node else distances_from(graph, self.stations)

    def nearest(self, node: int) -> tuple[int, float]:
        if self.every_node and node in self.grid.station_node_ids:
            return node, 0.0
        if self._dist is None:
            self._dist = distances_from(self.graph, self.stations)
        col = self._dist[:, node]
        j = int(np.argmin(col))  # first minimum -> lowest station id
        return int(self.stations[j]), float(col[j])

    def path(self, node: int) -> tuple[int, Path]:
        s, _ = self.nearest(node)
        if s == node:
            return s, Path((node,), 0.0, (0.0,))
        row = int(np.searchsorted(self.stations, s))
        d_node = distances_from(self.graph, node)
        return s, path_from_distances(self.graph, node, s, d_node, self._dist[row])


def nearest_station(graph: GeoGraph, grid: StationGrid, node: int) -> tuple[int, Path]:
    return StationIndex(graph, grid).path(node)
