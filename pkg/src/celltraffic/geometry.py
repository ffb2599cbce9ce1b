"""Convex polygonal partitions and the planar predicates used by the protocol.

Cells are convex polygons with counter-clockwise vertices and 1-based ids.
Two cells are neighbors when they share a full edge. Every ordered
neighbor pair (i, j) carries a unit move vector that drives entities from
cell i toward the common side.

All distances to a side are Euclidean distances to the closed segment.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from shapely.geometry import Polygon
from shapely.ops import unary_union

EPS = 1e-9
JSON_VERSION = 1


class GeometryError(ValueError):
    """Raised for malformed partitions or impossible geometric requests."""


class Point2(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class SideRef:
    """Common side of two adjacent cells.

    ``segment`` is ordered counter-clockwise with respect to ``cell_a``.
    """
    cell_a: int
    cell_b: int
    segment: tuple[Point2, Point2]

    @property
    def length(self) -> float:
        (ax, ay), (bx, by) = self.segment
        return math.hypot(bx - ax, by - ay)


@dataclass(frozen=True)
class PolyCell:
    """A convex cell.

    ``sides[k]`` is the neighbor id across the edge from ``vertices[k]`` to
    ``vertices[k + 1]``, or None when that edge lies on the environment
    boundary.
    """
    id: int
    vertices: tuple[Point2, ...]
    sides: tuple[int | None, ...]

    @property
    def n_sides(self) -> int:
        return len(self.vertices)

    @property
    def centroid(self) -> Point2:
        return polygon_centroid(self.vertices)

    @property
    def area(self) -> float:
        return polygon_area(self.vertices)


@dataclass(frozen=True)
class RegionParams:
    """Entity radius ``l`` and safety gap ``rs``; ``d = rs + l``."""
    l: float
    rs: float

    def __post_init__(self):
        if not (self.l > 0):
            raise GeometryError("l must be > 0")
        if not (self.rs >= 0):
            raise GeometryError("rs must be >= 0")

    @property
    def d(self) -> float:
        return self.rs + self.l


@dataclass
class Partition:
    """Cells, adjacency, shared sides and move vectors.

    ``neighbors[i]`` is the sorted tuple of neighbor ids. ``shared_sides`` is
    keyed by ``frozenset({i, j})`` and ``move_vectors`` by ``(i, j)``.
    """
    cells: tuple[PolyCell, ...]
    neighbors: dict[int, tuple[int, ...]]
    shared_sides: dict[frozenset, SideRef]
    move_vectors: dict[tuple[int, int], tuple[float, float]]
    _normals: dict = field(default_factory=dict, repr=False)
    _env: object = field(default=None, repr=False)

    def __post_init__(self):
        for (i, j) in self.move_vectors:
            a, b = self.side(i, j).segment
            n = _edge_outward_normal(a, b)
            if self.shared_sides[frozenset((i, j))].cell_a != i:
                n = (-n[0], -n[1])
            self._normals[(i, j)] = n

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def ids(self) -> range:
        return range(1, len(self.cells) + 1)

    def cell(self, i: int) -> PolyCell:
        if not 1 <= i <= len(self.cells):
            raise GeometryError(f"unknown cell id {i}")
        return self.cells[i - 1]

    def side(self, i: int, j: int) -> SideRef:
        try:
            return self.shared_sides[frozenset((i, j))]
        except KeyError:
            raise GeometryError(f"cells {i} and {j} are not neighbors") from None

    @property
    def env(self):
        """Union outline of the cells as a shapely polygon."""
        if self._env is None:
            self._env = unary_union([Polygon(c.vertices) for c in self.cells])
        return self._env

    def diameter(self, exclude=()) -> int:
        """Hop diameter of the adjacency graph restricted to ids not in ``exclude``.

        Disconnected pairs are ignored, so this is the largest finite
        eccentricity.
        """
        skip = set(exclude)
        best = 0
        for s in self.ids:
            if s in skip:
                continue
            dist = {s: 0}
            frontier = [s]
            while frontier:
                nxt = []
                for u in frontier:
                    for w in self.neighbors[u]:
                        if w not in skip and w not in dist:
                            dist[w] = dist[u] + 1
                            nxt.append(w)
                frontier = nxt
            best = max(best, max(dist.values()))
        return best


# ---------------------------------------------------------------------------
# polygon helpers

def polygon_area(vertices) -> float:
    """Signed shoelace area; positive for counter-clockwise order."""
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def polygon_centroid(vertices) -> Point2:
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cr = x * yn - xn * y
    a = cr.sum() / 2.0
    if abs(a) < EPS:
        return Point2(float(x.mean()), float(y.mean()))
    return Point2(float(((x + xn) * cr).sum() / (6 * a)),
                  float(((y + yn) * cr).sum() / (6 * a)))


def is_convex_ccw(vertices) -> bool:
    """True if the vertex loop is strictly convex and counter-clockwise."""
    n = len(vertices)
    if n < 3:
        return False
    for k in range(n):
        ax, ay = vertices[k]
        bx, by = vertices[(k + 1) % n]
        cx, cy = vertices[(k + 2) % n]
        if (bx - ax) * (cy - by) - (by - ay) * (cx - bx) <= EPS:
            return False
    return True


def _edge_outward_normal(a, b) -> tuple[float, float]:
    # outward normal of a ccw edge a->b
    dx, dy = b[0] - a[0], b[1] - a[1]
    n = math.hypot(dx, dy)
    return (dy / n, -dx / n)


def _same_point(p, q, tol=EPS) -> bool:
    return abs(p[0] - q[0]) <= tol and abs(p[1] - q[1]) <= tol


def point_in_polygon(pt, vertices, tol=EPS) -> bool:
    """Closed containment test for a convex ccw polygon."""
    n = len(vertices)
    for k in range(n):
        a, b = vertices[k], vertices[(k + 1) % n]
        nx, ny = _edge_outward_normal(a, b)
        if (pt[0] - a[0]) * nx + (pt[1] - a[1]) * ny > tol:
            return False
    return True


def inset_polygon(vertices, offset: float) -> list[tuple[float, float]]:
    """Points of a convex ccw polygon at distance >= ``offset`` from every edge.

    Computed by clipping with each inward-shifted edge half-plane. Returns an
    empty list when nothing remains.
    """
    poly = [tuple(map(float, v)) for v in vertices]
    n = len(vertices)
    for k in range(n):
        a, b = vertices[k], vertices[(k + 1) % n]
        nx, ny = _edge_outward_normal(a, b)
        # keep f(q) >= 0 with f(q) = -(q - a).n - offset
        def f(q):
            return -((q[0] - a[0]) * nx + (q[1] - a[1]) * ny) - offset
        out = []
        m = len(poly)
        for t in range(m):
            p, q = poly[t], poly[(t + 1) % m]
            fp, fq = f(p), f(q)
            if fp >= -EPS:
                out.append(p)
            if (fp >= -EPS) != (fq >= -EPS) and abs(fp - fq) > 0:
                s = fp / (fp - fq)
                out.append((p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])))
        poly = out
        if not poly:
            return []
    # drop duplicates
    clean = []
    for p in poly:
        if not clean or not _same_point(p, clean[-1], 1e-12):
            clean.append(p)
    if len(clean) > 1 and _same_point(clean[0], clean[-1], 1e-12):
        clean.pop()
    return clean


def inner_side_length(vertices, edge: int, offset: float) -> float:
    """Length of the inner transfer side of ``edge``.

    That is the part of the line at depth ``offset`` from the edge that
    stays at depth >= ``offset`` from every other edge.
    """
    inner = inset_polygon(vertices, offset)
    if len(inner) < 2:
        return 0.0
    a, b = vertices[edge], vertices[(edge + 1) % len(vertices)]
    nx, ny = _edge_outward_normal(a, b)
    on = [p for p in inner
          if abs(-((p[0] - a[0]) * nx + (p[1] - a[1]) * ny) - offset) <= 1e-7]
    if len(on) < 2:
        return 0.0
    tx, ty = -ny, nx
    proj = [p[0] * tx + p[1] * ty for p in on]
    return max(proj) - min(proj)


# ---------------------------------------------------------------------------
# builders

def partition_from_polygons(polys, move_vectors=None) -> Partition:
    """Build a partition from convex polygons listed in id order.

    Vertex loops are reoriented counter-clockwise. Two cells are neighbors
    when an edge of one coincides with an edge of the other. Move vectors
    default to side normals and may be overridden per ordered pair.
    """
    cells_v = []
    for k, poly in enumerate(polys):
        v = [Point2(float(x), float(y)) for x, y in poly]
        if polygon_area(v) < 0:
            v = v[::-1]
        if not is_convex_ccw(v):
            raise GeometryError(f"cell {k + 1} is not a convex non-degenerate polygon")
        cells_v.append(v)

    # index edges by rounded endpoints for matching
    def key(p):
        return (round(p[0], 7), round(p[1], 7))

    edge_owner = {}
    for ci, v in enumerate(cells_v, start=1):
        for k in range(len(v)):
            a, b = v[k], v[(k + 1) % len(v)]
            edge_owner.setdefault(frozenset((key(a), key(b))), []).append((ci, k))

    sides = [[None] * len(v) for v in cells_v]
    shared = {}
    nbrs = {i: set() for i in range(1, len(cells_v) + 1)}
    for owners in edge_owner.values():
        if len(owners) == 1:
            continue
        if len(owners) > 2:
            raise GeometryError("edge shared by more than two cells")
        (ci, ki), (cj, kj) = owners
        if ci == cj:
            raise GeometryError(f"cell {ci} has a repeated edge")
        sides[ci - 1][ki] = cj
        sides[cj - 1][kj] = ci
        a, b = cells_v[ci - 1][ki], cells_v[ci - 1][(ki + 1) % len(cells_v[ci - 1])]
        shared[frozenset((ci, cj))] = SideRef(ci, cj, (a, b))
        nbrs[ci].add(cj)
        nbrs[cj].add(ci)

    cells = tuple(PolyCell(i, tuple(v), tuple(s))
                  for i, (v, s) in enumerate(zip(cells_v, sides), start=1))
    mv = {}
    for pair, sref in shared.items():
        a, b = sref.segment
        n = _edge_outward_normal(a, b)
        mv[(sref.cell_a, sref.cell_b)] = n
        mv[(sref.cell_b, sref.cell_a)] = (-n[0], -n[1])
    for (i, j), u in (move_vectors or {}).items():
        if (i, j) not in mv:
            raise GeometryError(f"move vector given for non-neighbors {i}->{j}")
        norm = math.hypot(u[0], u[1])
        mv[(i, j)] = (u[0] / norm, u[1] / norm)
    return Partition(cells, {i: tuple(sorted(s)) for i, s in nbrs.items()}, shared, mv)


def build_square_grid(rows: int, cols: int, side_len: float = 1.0) -> Partition:
    """Axis-aligned grid, ids row-major from 1 with row 0 at the bottom."""
    if rows < 1 or cols < 1 or not side_len > 0:
        raise GeometryError("rows, cols >= 1 and side_len > 0 required")
    a = float(side_len)
    polys = []
    for r in range(rows):
        for c in range(cols):
            x, y = c * a, r * a
            polys.append([(x, y), (x + a, y), (x + a, y + a), (x, y + a)])
    return partition_from_polygons(polys)


def build_triangular_grid(rows: int, cols: int, side_len: float = 1.0) -> Partition:
    """Strips of alternating up and down equilateral triangles.

    Lattice points are ``P(m, r) = (m a + r a / 2, r h)``. In row ``r``,
    triangle ``2m`` points up and ``2m + 1`` points down, so each down
    triangle shares its top edge with the up triangle above it.
    """
    if rows < 1 or cols < 1 or not side_len > 0:
        raise GeometryError("rows, cols >= 1 and side_len > 0 required")
    a = float(side_len)
    h = a * math.sqrt(3) / 2

    def P(m, r):
        return (m * a + r * a / 2, r * h)

    polys = []
    for r in range(rows):
        for k in range(cols):
            m = k // 2
            if k % 2 == 0:
                polys.append([P(m, r), P(m + 1, r), P(m, r + 1)])
            else:
                polys.append([P(m + 1, r), P(m + 1, r + 1), P(m, r + 1)])
    return partition_from_polygons(polys)


def build_parallelogram_grid(rows: int, cols: int, base: float = 1.0,
                             slant=(0.3, 1.0)) -> Partition:
    """Sheared grid of congruent parallelograms.

    Horizontal neighbors move along (+-1, 0); vertical neighbors move along
    the slant direction, parallel to the slanted sides.
    """
    sx, sy = float(slant[0]), float(slant[1])
    if rows < 1 or cols < 1 or not base > 0:
        raise GeometryError("rows, cols >= 1 and base > 0 required")
    if abs(base * sy) < EPS:
        raise GeometryError("degenerate slant: parallel to the base")
    if sy < 0:
        sx, sy = -sx, -sy
    polys = []
    for r in range(rows):
        for c in range(cols):
            ox, oy = c * base + r * sx, r * sy
            polys.append([(ox, oy), (ox + base, oy),
                          (ox + base + sx, oy + sy), (ox + sx, oy + sy)])
    n = math.hypot(sx, sy)
    us = (sx / n, sy / n)
    mv = {}
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c + 1
            if c + 1 < cols:
                mv[(i, i + 1)] = (1.0, 0.0)
                mv[(i + 1, i)] = (-1.0, 0.0)
            if r + 1 < rows:
                mv[(i, i + cols)] = us
                mv[(i + cols, i)] = (-us[0], -us[1])
    return partition_from_polygons(polys, mv)


def build_snub_square_patch(side_len: float = 1.0) -> Partition:
    """A square surrounded by four equilateral triangles.

    This is a patch of the snub-square style tiling where a square shares
    each side with a triangle. Inner transfer sides of the square are longer
    than those of the triangles, so transfers are not feasible.
    """
    a = float(side_len)
    h = a * math.sqrt(3) / 2
    sq = [(0, 0), (a, 0), (a, a), (0, a)]
    tris = [
        [(0, 0), (a / 2, -h), (a, 0)],
        [(a, 0), (a + h, a / 2), (a, a)],
        [(a, a), (a / 2, a + h), (0, a)],
        [(0, a), (-h, a / 2), (0, 0)],
    ]
    return partition_from_polygons([sq] + tris)


@dataclass(frozen=True)
class GridSpec:
    kind: str = "square"
    rows: int = 8
    cols: int = 8
    side_len: float = 1.0


def build_partition(grid: GridSpec) -> Partition:
    if grid.kind == "square":
        return build_square_grid(grid.rows, grid.cols, grid.side_len)
    if grid.kind == "triangular":
        return build_triangular_grid(grid.rows, grid.cols, grid.side_len)
    if grid.kind == "parallelogram":
        return build_parallelogram_grid(grid.rows, grid.cols, grid.side_len,
                                        (0.3 * grid.side_len, grid.side_len))
    raise GeometryError(f"unknown grid kind {grid.kind!r}")


# ---------------------------------------------------------------------------
# vectors, distances, regions

def side_normal(p: Partition, i: int, j: int) -> tuple[float, float]:
    """Unit normal of Side(i, j) pointing from i into j."""
    try:
        return p._normals[(i, j)]
    except KeyError:
        raise GeometryError(f"cells {i} and {j} are not neighbors") from None


def move_vector(p: Partition, i: int, j: int) -> tuple[float, float]:
    try:
        return p.move_vectors[(i, j)]
    except KeyError:
        raise GeometryError(f"cells {i} and {j} are not neighbors") from None


def segment_distance(px, py, ax, ay, bx, by) -> float:
    dx, dy = bx - ax, by - ay
    L2 = dx * dx + dy * dy
    t = ((px - ax) * dx + (py - ay) * dy) / L2 if L2 > 0 else 0.0
    if t < 0.0:
        t = 0.0
    elif t > 1.0:
        t = 1.0
    return math.hypot(px - ax - t * dx, py - ay - t * dy)


def distance_to_side(pt, s: SideRef) -> float:
    (ax, ay), (bx, by) = s.segment
    return segment_distance(pt[0], pt[1], ax, ay, bx, by)


def in_safety_region(p: Partition, i: int, s: SideRef, pt, params: RegionParams) -> bool:
    """True when ``pt`` is within 3d of side ``s`` of cell ``i``."""
    if i not in (s.cell_a, s.cell_b):
        raise GeometryError(f"side {s.cell_a}-{s.cell_b} is not a side of cell {i}")
    return distance_to_side(pt, s) <= 3 * params.d


def in_transfer_region(p: Partition, i: int, s: SideRef, pt, params: RegionParams) -> bool:
    """True when ``pt`` is within l of side ``s`` of cell ``i``."""
    if i not in (s.cell_a, s.cell_b):
        raise GeometryError(f"side {s.cell_a}-{s.cell_b} is not a side of cell {i}")
    return distance_to_side(pt, s) <= params.l + EPS


def reset_entity_position(pt, p: Partition, i: int, j: int, params: RegionParams) -> Point2:
    """Place a transferring entity tangent to Side(i, j) inside cell j.

    The new center lies on the line at depth l inside j, where the ray from
    ``pt`` along the move vector crosses it.
    """
    s = p.side(i, j)
    nx, ny = side_normal(p, i, j)
    ux, uy = move_vector(p, i, j)
    ax, ay = s.segment[0]
    un = ux * nx + uy * ny
    if un <= EPS:
        raise GeometryError(f"move vector {i}->{j} is not transverse to the side")
    t = (params.l - ((pt[0] - ax) * nx + (pt[1] - ay) * ny)) / un
    q = Point2(pt[0] + t * ux, pt[1] + t * uy)
    if not disc_inside(q, p.cell(j).vertices, params.l, tol=1e-7):
        raise GeometryError(f"reset point {q} for {i}->{j} leaves cell {j}")
    return q


def disc_inside(pt, vertices, radius: float, tol=EPS) -> bool:
    """True if the closed disc of ``radius`` at ``pt`` lies in the polygon."""
    n = len(vertices)
    for k in range(n):
        a, b = vertices[k], vertices[(k + 1) % n]
        nx, ny = _edge_outward_normal(a, b)
        if -((pt[0] - a[0]) * nx + (pt[1] - a[1]) * ny) < radius - tol:
            return False
    return True


# ---------------------------------------------------------------------------
# validation

@dataclass
class ValidationReport:
    """Per-check failures; a check passes when its list is empty."""
    checks: dict[str, list] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(not v for v in self.checks.values())

    def passed(self, name: str) -> bool:
        return not self.checks[name]

    def summary(self) -> str:
        lines = []
        for name, fails in self.checks.items():
            status = "ok" if not fails else f"FAIL ({len(fails)})"
            lines.append(f"{name}: {status}")
            for f in fails[:5]:
                lines.append(f"  - {f}")
        return "\n".join(lines)


CHECKS = ("partition_axioms", "transfer_regions", "projection",
          "transfer_feasibility", "cell_size")


def validate_partition(p: Partition, params: RegionParams) -> ValidationReport:
    """Check partition axioms and the two movement assumptions.

    Checks, in order: partition axioms, nonempty inner transfer sides on
    every shared side, the projection property of each move vector,
    equal inner transfer sides across every shared side, and that every
    cell can hold one entity disc.
    """
    rep = ValidationReport({k: [] for k in CHECKS})
    ax = rep.checks["partition_axioms"]
    polys = [Polygon(c.vertices) for c in p.cells]
    for c in p.cells:
        if not is_convex_ccw(c.vertices):
            ax.append(f"cell {c.id} not convex ccw")
    total = sum(pg.area for pg in polys)
    env = p.env
    if abs(total - env.area) > 1e-6 * max(1.0, env.area):
        ax.append(f"cell areas {total:.9g} != env area {env.area:.9g}")
    if env.geom_type != "Polygon" or len(env.interiors) > 0:
        ax.append("environment is not simply connected")
    for a in range(len(polys)):
        for b in range(a + 1, len(polys)):
            if not polys[a].intersects(polys[b]):
                continue
            inter = polys[a].intersection(polys[b])
            if inter.area > EPS:
                ax.append(f"cells {a + 1},{b + 1} overlap")
                continue
            if inter.length > EPS:
                if frozenset((a + 1, b + 1)) not in p.shared_sides:
                    ax.append(f"cells {a + 1},{b + 1} touch along a partial side")
                elif abs(inter.length - p.side(a + 1, b + 1).length) > 1e-7:
                    ax.append(f"cells {a + 1},{b + 1} touch along more than one side")
    for i in p.ids:
        for j in p.neighbors[i]:
            if i not in p.neighbors[j]:
                ax.append(f"neighbor relation {i}->{j} not symmetric")

    l = params.l
    for key, s in p.shared_sides.items():
        for i, j in ((s.cell_a, s.cell_b), (s.cell_b, s.cell_a)):
            ci = p.cell(i)
            k = ci.sides.index(j)
            Li = inner_side_length(ci.vertices, k, l)
            if Li <= EPS:
                rep.checks["transfer_regions"].append(f"cell {i} side to {j}: empty inner side")
            cj = p.cell(j)
            Lj = inner_side_length(cj.vertices, cj.sides.index(i), l)
            if Li > Lj + 1e-7:
                rep.checks["transfer_feasibility"].append(
                    f"{i}->{j}: inner side {Li:.6g} in {i} longer than {Lj:.6g} in {j}")

    for (i, j), (ux, uy) in p.move_vectors.items():
        nx, ny = side_normal(p, i, j)
        un = ux * nx + uy * ny
        if un <= EPS:
            rep.checks["projection"].append(f"{i}->{j}: u.n = {un:.3g} <= 0")
            continue
        (sx, sy), (ex, ey) = p.side(i, j).segment
        dx, dy = ex - sx, ey - sy
        L2 = dx * dx + dy * dy
        for (vx, vy) in p.cell(i).vertices:
            t = ((sx - vx) * nx + (sy - vy) * ny) / un
            qx, qy = vx + t * ux, vy + t * uy
            w = ((qx - sx) * dx + (qy - sy) * dy) / L2
            if t < -EPS or w < -EPS or w > 1 + EPS:
                rep.checks["projection"].append(
                    f"{i}->{j}: ray from vertex ({vx:.3g},{vy:.3g}) misses the side")
                break

    for c in p.cells:
        if not inset_polygon(c.vertices, l):
            rep.checks["cell_size"].append(f"cell {c.id} cannot contain a disc of radius {l}")
    return rep


# ---------------------------------------------------------------------------
# serialization

def partition_to_json(p: Partition) -> str:
    doc = {
        "version": JSON_VERSION,
        "cells": [{"id": c.id, "vertices": [[v.x, v.y] for v in c.vertices]} for c in p.cells],
        "neighbors": {str(i): list(p.neighbors[i]) for i in p.ids},
        "move_vectors": {f"{i}->{j}": [u[0], u[1]] for (i, j), u in sorted(p.move_vectors.items())},
    }
    return json.dumps(doc)


def partition_from_json(text: str) -> Partition:
    doc = json.loads(text)
    if doc.get("version") != JSON_VERSION:
        raise GeometryError(f"unsupported partition version {doc.get('version')!r}")
    cells = sorted(doc["cells"], key=lambda c: c["id"])
    if [c["id"] for c in cells] != list(range(1, len(cells) + 1)):
        raise GeometryError("cell ids must be 1..N")
    mv = {}
    for k, u in doc.get("move_vectors", {}).items():
        i, j = (int(x) for x in k.split("->"))
        mv[(i, j)] = (float(u[0]), float(u[1]))
    p = partition_from_polygons([c["vertices"] for c in cells], mv)
    for k, ids in doc.get("neighbors", {}).items():
        if tuple(sorted(ids)) != p.neighbors[int(k)]:
            raise GeometryError(f"neighbors of {k} disagree with the cell geometry")
    return p
