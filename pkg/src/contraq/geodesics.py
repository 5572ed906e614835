"""Shortest paths in the plane minus polygonal obstacles.

Paths are taut polylines bending only at obstacle corners, found on the
visibility graph over {source, target} and all obstacle vertices. Multiple
minimal connections (slit geometries) are enumerated as the k shortest
homotopically distinct paths, distinctness meaning different corner
sequences. The diffraction fan at a corner samples the angular sector not
blocked by the obstacle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import networkx as nx
import numpy as np
from shapely.geometry import LineString, Point, Polygon


class Unreachable(RuntimeError):
    """No obstacle-avoiding path connects source and target."""


_GRAZE_EPS = 1e-12


@dataclass
class PolygonalWorld:
    """Free plane minus a set of simple polygonal obstacles."""

    obstacles: list
    source: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        self.obstacles = [np.asarray(o, dtype=float) for o in self.obstacles]
        self.source = np.asarray(self.source, dtype=float)
        self.target = np.asarray(self.target, dtype=float)
        self._polys = []
        for i, o in enumerate(self.obstacles):
            if o.ndim != 2 or o.shape[1] != 2 or o.shape[0] < 3:
                raise ValueError(f"obstacle {i} must be an (m>=3, 2) vertex array")
            poly = Polygon(o)
            if not poly.is_valid or not poly.is_simple:
                raise ValueError(f"obstacle {i} is not a simple polygon")
            self._polys.append(poly)
        for name, pt in (("source", self.source), ("target", self.target)):
            if any(Point(pt).within(poly) for poly in self._polys):
                raise ValueError(f"{name} lies inside an obstacle")

    def polygons(self) -> list:
        return list(self._polys)

    def segment_free(self, a, b) -> bool:
        """True when the open segment a-b avoids every obstacle interior.

        Grazing along boundaries and touching corners is allowed; only an
        interior-interior overlap blocks visibility.
        """
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if np.linalg.norm(b - a) <= _GRAZE_EPS:
            return True
        seg = LineString([a, b])
        return not any(seg.relate_pattern(poly, "T********") for poly in self._polys)


@dataclass
class GeodesicPath:
    """Taut polyline source -> corners -> target."""

    vertices: np.ndarray
    length: float
    corners: list = field(default_factory=list)
    travel_time: float = 0.0
    action: float = 0.0

    @classmethod
    def from_vertices(cls, pts, speed: float = 1.0) -> "GeodesicPath":
        pts = np.asarray(pts, dtype=float)
        length = float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))
        return cls(vertices=pts, length=length,
                   corners=[pts[i] for i in range(1, len(pts) - 1)],
                   travel_time=length / speed,
                   action=0.5 * speed * length)


def _polyline_length(pts) -> float:
    pts = np.asarray(pts, dtype=float)
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def visibility_graph(world: PolygonalWorld):
    """Graph over source, target, and obstacle vertices; edges are free segments."""
    nodes = [("s", tuple(world.source)), ("t", tuple(world.target))]
    for i, o in enumerate(world.obstacles):
        for v, pt in enumerate(o):
            nodes.append(((i, v), tuple(pt)))
    G = nx.Graph()
    for key, pt in nodes:
        # vertices buried inside another obstacle cannot be path corners
        if any(Point(pt).within(poly) for poly in world.polygons()):
            continue
        G.add_node(key, pt=np.array(pt))
    keys = list(G.nodes)
    for a in range(len(keys)):
        for b in range(a + 1, len(keys)):
            pa, pb = G.nodes[keys[a]]["pt"], G.nodes[keys[b]]["pt"]
            if world.segment_free(pa, pb):
                G.add_edge(keys[a], keys[b], weight=float(np.linalg.norm(pb - pa)))
    return G


def _taut(world: PolygonalWorld, pts) -> bool:
    """Local geodesic test: every bend must press against obstacle material.

    Shortening a taut path at a corner means nudging the bend point along
    the inner-angle bisector; the path is taut exactly when that probe lands
    inside an obstacle. Collinear (removable) corners are not taut; their
    geometry is covered by the path that skips them.
    """
    polys = world.polygons()
    scale = max(1.0, np.abs(pts).max())
    for a, v, b in zip(pts[:-2], pts[1:-1], pts[2:]):
        da = a - v
        db = b - v
        da = da / np.linalg.norm(da)
        db = db / np.linalg.norm(db)
        bis = da + db
        nb = np.linalg.norm(bis)
        if nb < 1e-12:
            return False
        probe = v + (1e-9 * scale / nb) * bis
        if not any(Point(probe).within(poly) for poly in polys):
            return False
    return True


def shortest_paths(world: PolygonalWorld, k: int) -> list:
    """The k shortest homotopically distinct taut paths, sorted by length.

    Candidates are enumerated on the visibility graph in length order and
    filtered to taut paths (bends pressing against obstacles), so each
    returned path is locally shortest; distinctness is by corner sequence
    and ties break lexicographically by the corner coordinates. Fewer than
    k paths are returned when the world does not admit k distinct taut
    connections within the enumeration budget.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    G = visibility_graph(world)
    if "s" not in G or "t" not in G:
        raise Unreachable("source or target has no visibility")
    try:
        gen = nx.shortest_simple_paths(G, "s", "t", weight="weight")
    except nx.NetworkXNoPath:
        raise Unreachable("no obstacle-avoiding path exists") from None
    taut = []
    cap = max(2000, 100 * k)
    pulls = 0
    try:
        for node_path in gen:
            pulls += 1
            pts = np.stack([G.nodes[n]["pt"] for n in node_path])
            length = _polyline_length(pts)
            if _taut(world, pts):
                taut.append((length, pts))
            if len(taut) >= k:
                # pull on while ties with the k-th taut length are possible
                kth = sorted(c[0] for c in taut)[k - 1]
                if length > kth * (1.0 + 1e-12) + 1e-12:
                    break
            if pulls >= cap:
                break
    except nx.NetworkXNoPath:
        raise Unreachable("no obstacle-avoiding path exists") from None
    if not taut:
        raise Unreachable("no obstacle-avoiding path exists")
    taut.sort(key=lambda c: (c[0], tuple(map(tuple, c[1][1:-1]))))
    return [GeodesicPath.from_vertices(pts) for _, pts in taut[:k]]


def _locate_corner(world: PolygonalWorld, corner, tol=1e-9):
    for i, o in enumerate(world.obstacles):
        for v, pt in enumerate(o):
            if np.linalg.norm(pt - corner) <= tol:
                return i, v
    raise ValueError(f"corner {corner} is not an obstacle vertex")


def corner_fan(world: PolygonalWorld, path: GeodesicPath, count: int) -> list:
    """Admissible outgoing unit directions at the path's final corner.

    Returns ``count`` headings uniformly spanning (inclusive of both
    boundary rays) the angular sector not occupied by the obstacle wedge
    incident at that corner.
    """
    if not path.corners:
        raise ValueError("path has no corners")
    if count < 1:
        raise ValueError("count must be >= 1")
    corner = np.asarray(path.corners[-1], dtype=float)
    pi_idx, v_idx = _locate_corner(world, corner)
    ring = world.obstacles[pi_idx]
    m = ring.shape[0]
    prev_pt = ring[(v_idx - 1) % m]
    next_pt = ring[(v_idx + 1) % m]
    d1 = prev_pt - corner
    d2 = next_pt - corner
    th1 = float(np.arctan2(d1[1], d1[0]))
    th2 = float(np.arctan2(d2[1], d2[0]))
    span12 = (th2 - th1) % (2.0 * np.pi)
    scale = max(1.0, np.abs(ring).max())
    probe_r = 1e-6 * scale
    mid = th1 + 0.5 * span12
    probe = corner + probe_r * np.array([np.cos(mid), np.sin(mid)])
    poly = world.polygons()[pi_idx]
    if Point(probe).within(poly):
        start, span = th2, 2.0 * np.pi - span12
    else:
        start, span = th1, span12
    angles = start + np.linspace(0.0, span, count) if count > 1 else np.array([start])
    return [np.array([np.cos(a), np.sin(a)]) for a in angles]


def fan_contains(world: PolygonalWorld, path: GeodesicPath, direction) -> bool:
    """True when a heading lies inside the final-corner diffraction fan."""
    fine = corner_fan(world, path, 721)
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    return any(float(u @ d) >= np.cos(np.pi / 720.0) - 1e-12 for u in fine)


def path_table(paths: list, speed: float) -> list:
    """Rows of length, travel time, action, and action gap to the shortest."""
    if speed <= 0.0:
        raise ValueError("speed must be positive")
    if not paths:
        return []
    min_len = min(p.length for p in paths)
    rows = []
    for p in paths:
        action = 0.5 * speed * p.length
        rows.append({
            "length": p.length,
            "travel_time": p.length / speed,
            "action": action,
            "action_difference_vs_shortest": action - 0.5 * speed * min_len,
        })
    return rows
