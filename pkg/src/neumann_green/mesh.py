"""Simplicial meshes of intervals and polygons, plus parabolic geometry.

Meshes are immutable once built: every array is flagged read-only and derived
quantities are computed eagerly in ``__post_init__``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .errors import MeshError

__all__ = [
    "Mesh",
    "SpaceTimePoint",
    "DomainCylinder",
    "BallCylinder",
    "build_interval_mesh",
    "build_polygon_mesh",
    "build_rectangle_mesh",
    "build_l_shape_mesh",
    "parabolic_distance",
    "dist_to_parabolic_boundary",
    "dump_mesh",
    "load_mesh",
]


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming P1 mesh of a bounded domain in one or two dimensions.

    Attributes
    ----------
    nodes : (P, n) float array
    elements : (E, n+1) int array, counter-clockwise in 2D
    boundary_facets : (F, n) int array; end points in 1D, edges in 2D
    """

    nodes: np.ndarray
    elements: np.ndarray
    boundary_facets: np.ndarray
    dimension: int = field(init=False)
    element_measures: np.ndarray = field(init=False, repr=False)
    domain_measure: float = field(init=False)
    mesh_size: float = field(init=False)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        n = nodes.shape[1]
        if n not in (1, 2):
            raise MeshError(f"only 1D and 2D meshes are supported, got n={n}")
        elements = np.asarray(self.elements, dtype=np.int64).reshape(-1, n + 1)
        facets = np.asarray(self.boundary_facets, dtype=np.int64).reshape(-1, n)
        if elements.size == 0:
            raise MeshError("mesh has no elements")
        if elements.min() < 0 or elements.max() >= len(nodes):
            raise MeshError("element index out of range")

        if n == 1:
            meas = nodes[elements[:, 1], 0] - nodes[elements[:, 0], 0]
            diam = np.abs(meas)
        else:
            p0, p1, p2 = (nodes[elements[:, k]] for k in range(3))
            e1, e2 = p1 - p0, p2 - p0
            meas = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
            diam = np.max(
                np.stack([np.linalg.norm(p1 - p0, axis=1),
                          np.linalg.norm(p2 - p1, axis=1),
                          np.linalg.norm(p0 - p2, axis=1)]),
                axis=0,
            )
        if np.any(meas <= 0.0):
            raise MeshError("every element must have positive (oriented) measure")

        object.__setattr__(self, "nodes", _frozen(nodes, float))
        object.__setattr__(self, "elements", _frozen(elements, np.int64))
        object.__setattr__(self, "boundary_facets", _frozen(facets, np.int64))
        object.__setattr__(self, "dimension", n)
        object.__setattr__(self, "element_measures", _frozen(meas, float))
        object.__setattr__(self, "domain_measure", float(math.fsum(meas)))
        object.__setattr__(self, "mesh_size", float(diam.max()))

    @property
    def num_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def num_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def barycenters(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    @property
    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.nodes.min(axis=0), self.nodes.max(axis=0)

    @property
    def diameter(self) -> float:
        pts = self.nodes[np.unique(self.boundary_facets)]
        if self.dimension == 1:
            return float(pts.max() - pts.min())
        diff = pts[:, None, :] - pts[None, :, :]
        return float(np.sqrt((diff ** 2).sum(-1)).max())

    def edges(self) -> np.ndarray:
        """Unique undirected edges as an (K, 2) array."""
        if self.dimension == 1:
            return np.array(self.elements)
        el = self.elements
        e = np.concatenate([el[:, [0, 1]], el[:, [1, 2]], el[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def boundary_distance(self, points) -> np.ndarray:
        """Euclidean distance from each point to the boundary of the domain."""
        pts = np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, self.dimension)
        if self.dimension == 1:
            ends = self.nodes[self.boundary_facets[:, 0], 0]
            return np.min(np.abs(pts[:, :1] - ends[None, :]), axis=1)
        a = self.nodes[self.boundary_facets[:, 0]]
        b = self.nodes[self.boundary_facets[:, 1]]
        ab = b - a
        ap = pts[:, None, :] - a[None, :, :]
        s = np.clip((ap * ab).sum(-1) / (ab * ab).sum(-1), 0.0, 1.0)
        closest = a[None] + s[..., None] * ab[None]
        return np.sqrt(((pts[:, None, :] - closest) ** 2).sum(-1)).min(axis=1)

    # point location -------------------------------------------------------
    def _tree(self):
        tree = self.__dict__.get("_kdtree")
        if tree is None:
            tree = cKDTree(self.barycenters)
            object.__setattr__(self, "_kdtree", tree)
        return tree

    def barycentric(self, elem: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Barycentric coordinates of ``points[i]`` in element ``elem[i]``."""
        verts = self.nodes[self.elements[elem]]            # (k, n+1, n)
        if self.dimension == 1:
            x0, x1 = verts[:, 0, 0], verts[:, 1, 0]
            l1 = (points[:, 0] - x0) / (x1 - x0)
            return np.stack([1.0 - l1, l1], axis=1)
        T = np.stack([verts[:, 1] - verts[:, 0], verts[:, 2] - verts[:, 0]], axis=2)
        rhs = points - verts[:, 0]
        lam12 = np.linalg.solve(T, rhs[..., None])[..., 0]
        return np.column_stack([1.0 - lam12.sum(axis=1), lam12])

    def locate(self, points, tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
        """Element index and barycentric coordinates per point.

        Raises ``MeshError`` for points outside the closed domain.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, self.dimension)
        m = len(pts)
        if self.dimension == 1:
            x = self.nodes[:, 0]
            left = x[self.elements[:, 0]]
            order = np.argsort(left)
            idx = np.searchsorted(left[order], pts[:, 0], side="right") - 1
            idx = np.clip(idx, 0, self.num_elements - 1)
            elem = order[idx]
            lam = self.barycentric(elem, pts)
            bad = np.any(lam < -tol, axis=1)
            if np.any(bad):
                raise MeshError(f"{bad.sum()} point(s) outside the mesh")
            return elem, np.clip(lam, 0.0, 1.0)

        elem = np.full(m, -1, dtype=np.int64)
        lam = np.zeros((m, 3))
        k = min(12, self.num_elements)
        _, cand = self._tree().query(pts, k=k)
        cand = np.asarray(cand).reshape(m, k)
        for j in range(k):
            todo = elem < 0
            if not np.any(todo):
                break
            c = cand[todo, j]
            l = self.barycentric(c, pts[todo])
            ok = np.all(l >= -tol, axis=1)
            rows = np.flatnonzero(todo)[ok]
            elem[rows] = c[ok]
            lam[rows] = l[ok]
        todo = np.flatnonzero(elem < 0)
        for i in todo:
            l = self.barycentric(np.arange(self.num_elements),
                                 np.repeat(pts[i:i + 1], self.num_elements, axis=0))
            score = l.min(axis=1)
            best = int(np.argmax(score))
            if score[best] < -tol:
                raise MeshError(f"point {pts[i]} lies outside the mesh")
            elem[i] = best
            lam[i] = l[best]
        return elem, np.clip(lam, 0.0, 1.0)

    def interpolation_matrix(self, points) -> sparse.csr_matrix:
        """Sparse (len(points), P) matrix evaluating P1 nodal fields at points."""
        elem, lam = self.locate(points)
        rows = np.repeat(np.arange(len(elem)), self.dimension + 1)
        cols = self.elements[elem].ravel()
        return sparse.csr_matrix((lam.ravel(), (rows, cols)),
                                 shape=(len(elem), self.num_nodes))

    def refine(self) -> "Mesh":
        """Uniform refinement: bisect 1D cells, red-refine triangles."""
        if self.dimension == 1:
            x = np.sort(self.nodes[:, 0])
            mid = 0.5 * (x[:-1] + x[1:])
            return _interval_from_nodes(np.sort(np.concatenate([x, mid])))
        nodes, tris = _red_refine(np.array(self.nodes), np.array(self.elements))
        return _mesh_from_triangles(nodes, tris)


@dataclass(frozen=True)
class SpaceTimePoint:
    x: tuple
    t: float

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in np.atleast_1d(self.x)))
        object.__setattr__(self, "t", float(self.t))


def parabolic_distance(X: SpaceTimePoint, Y: SpaceTimePoint) -> float:
    """max(|x - y|, sqrt|t - s|)."""
    dx = math.dist(X.x, Y.x)
    return max(dx, math.sqrt(abs(X.t - Y.t)))


@dataclass(frozen=True)
class DomainCylinder:
    """Omega x (t_start, t_end); ``-math.inf`` / ``math.inf`` for unbounded extent."""

    mesh: Mesh
    t_start: float = -math.inf
    t_end: float = math.inf


@dataclass(frozen=True)
class BallCylinder:
    """B_r(x0) x time interval; ``kind`` is 'full', 'minus' or 'plus'."""

    center: SpaceTimePoint
    radius: float
    kind: str = "full"

    @property
    def time_interval(self) -> tuple[float, float]:
        t0, r2 = self.center.t, self.radius ** 2
        return {
            "full": (t0 - r2, t0 + r2),
            "minus": (t0 - r2, t0),
            "plus": (t0, t0 + r2),
        }[self.kind]


def dist_to_parabolic_boundary(X: SpaceTimePoint, cylinder) -> float:
    """Parabolic distance from ``X`` to the parabolic boundary (lateral + bottom).

    Returns ``math.inf`` when the boundary is empty in every direction.
    """
    if isinstance(cylinder, DomainCylinder):
        lateral = float(cylinder.mesh.boundary_distance([X.x])[0])
        bottom = math.inf if cylinder.t_start == -math.inf else math.sqrt(max(X.t - cylinder.t_start, 0.0))
        return min(lateral, bottom)
    if isinstance(cylinder, BallCylinder):
        lateral = cylinder.radius - math.dist(X.x, cylinder.center.x)
        bottom = math.sqrt(max(X.t - cylinder.time_interval[0], 0.0))
        return max(min(lateral, bottom), 0.0)
    raise TypeError(f"unsupported cylinder type {type(cylinder).__name__}")


# ---------------------------------------------------------------------------
# constructors

def _interval_from_nodes(x: np.ndarray) -> Mesh:
    cells = len(x) - 1
    elements = np.column_stack([np.arange(cells), np.arange(1, cells + 1)])
    return Mesh(x[:, None], elements, np.array([[0], [cells]]))


def build_interval_mesh(a: float, b: float, cells: int) -> Mesh:
    if not a < b:
        raise MeshError(f"need a < b, got a={a}, b={b}")
    if int(cells) != cells or cells < 1:
        raise MeshError(f"need at least one cell, got {cells}")
    return _interval_from_nodes(np.linspace(a, b, int(cells) + 1))


def _polygon_area(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _segments_intersect(p1, p2, p3, p4) -> bool:
    d1, d2 = _cross(p3, p4, p1), _cross(p3, p4, p2)
    d3, d4 = _cross(p1, p2, p3), _cross(p1, p2, p4)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and 0 not in (d1, d2, d3, d4):
        return True

    def on_seg(p, q, r):
        return (min(p[0], q[0]) <= r[0] <= max(p[0], q[0])
                and min(p[1], q[1]) <= r[1] <= max(p[1], q[1]))

    return ((d1 == 0 and on_seg(p3, p4, p1)) or (d2 == 0 and on_seg(p3, p4, p2))
            or (d3 == 0 and on_seg(p1, p2, p3)) or (d4 == 0 and on_seg(p1, p2, p4)))


def _check_simple(v: np.ndarray) -> None:
    k = len(v)
    if k < 3:
        raise MeshError("a polygon needs at least three vertices")
    if len(np.unique(np.round(v, 14), axis=0)) != k:
        raise MeshError("polygon has a repeated vertex")
    for i in range(k):
        for j in range(i + 1, k):
            if j == i + 1 or (i == 0 and j == k - 1):
                continue
            if _segments_intersect(v[i], v[(i + 1) % k], v[j], v[(j + 1) % k]):
                raise MeshError("polygon is self-intersecting")
    if abs(_polygon_area(v)) <= 1e-14:
        raise MeshError("polygon has zero area")


def _min_angle(a, b, c) -> float:
    def ang(p, q, r):
        u, w = q - p, r - p
        cosv = np.dot(u, w) / (np.linalg.norm(u) * np.linalg.norm(w))
        return math.acos(max(-1.0, min(1.0, cosv)))
    return min(ang(a, b, c), ang(b, c, a), ang(c, a, b))


def _ear_clip(v: np.ndarray) -> np.ndarray:
    """Coarse triangulation of a CCW simple polygon, best-quality ear first."""
    idx = list(range(len(v)))
    tris = []
    while len(idx) > 3:
        best, best_q = None, -1.0
        m = len(idx)
        for k in range(m):
            i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % m]
            a, b, c = v[i0], v[i1], v[i2]
            if _cross(a, b, c) <= 1e-14:
                continue
            inside = False
            for j in idx:
                if j in (i0, i1, i2):
                    continue
                p = v[j]
                if _cross(a, b, p) >= 0 and _cross(b, c, p) >= 0 and _cross(c, a, p) >= 0:
                    inside = True
                    break
            if inside:
                continue
            q = _min_angle(a, b, c)
            if q > best_q:
                best, best_q = k, q
        if best is None:
            raise MeshError("could not triangulate polygon (degenerate vertices?)")
        m = len(idx)
        tris.append((idx[best - 1], idx[best], idx[(best + 1) % m]))
        del idx[best]
    a, b, c = (v[i] for i in idx)
    if _cross(a, b, c) <= 1e-14:
        raise MeshError("polygon triangulation produced a degenerate triangle")
    tris.append(tuple(idx))
    return np.array(tris, dtype=np.int64)


def _red_refine(nodes: np.ndarray, tris: np.ndarray):
    mid = {}
    new_nodes = list(map(tuple, nodes))

    def midpoint(i, j):
        key = (i, j) if i < j else (j, i)
        if key not in mid:
            mid[key] = len(new_nodes)
            new_nodes.append(tuple(0.5 * (nodes[i] + nodes[j])))
        return mid[key]

    out = []
    for a, b, c in tris:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        out += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
    return np.array(new_nodes), np.array(out, dtype=np.int64)


def _mesh_from_triangles(nodes: np.ndarray, tris: np.ndarray) -> Mesh:
    e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    key = np.sort(e, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    boundary = e[counts[inv.ravel()] == 1]
    return Mesh(nodes, tris, boundary)


def build_polygon_mesh(vertices: Sequence[Sequence[float]], target_h: float) -> Mesh:
    """Triangulate a simple polygon and refine uniformly until h <= target_h."""
    if not target_h > 0:
        raise MeshError(f"target_h must be positive, got {target_h}")
    v = np.asarray(vertices, dtype=float).reshape(-1, 2)
    _check_simple(v)
    area = _polygon_area(v)
    if area < 0:
        v, area = v[::-1].copy(), -area
    nodes, tris = v, _ear_clip(v)
    h_max = min(target_h, math.sqrt(area))
    mesh = _mesh_from_triangles(nodes, tris)
    while mesh.mesh_size > h_max:
        nodes, tris = _red_refine(nodes, tris)
        mesh = _mesh_from_triangles(nodes, tris)
    if abs(mesh.domain_measure - area) > 1e-12 * area:
        raise MeshError("triangulated area does not match the polygon area")
    return mesh


def build_rectangle_mesh(x0: float, x1: float, y0: float, y1: float, target_h: float) -> Mesh:
    return build_polygon_mesh([(x0, y0), (x1, y0), (x1, y1), (x0, y1)], target_h)


def build_l_shape_mesh(target_h: float) -> Mesh:
    """[0,1]^2 minus [0.5,1]^2."""
    return build_polygon_mesh(
        [(0, 0), (1, 0), (1, 0.5), (0.5, 0.5), (0.5, 1), (0, 1)], target_h
    )


# ---------------------------------------------------------------------------
# plain-text persistence

def dump_mesh(mesh: Mesh, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"{mesh.dimension} {mesh.num_nodes} {mesh.num_elements}\n")
        for p in mesh.nodes:
            fh.write(" ".join(f"{c:.17g}" for c in p) + "\n")
        for e in mesh.elements:
            fh.write(" ".join(str(int(i)) for i in e) + "\n")
        for f in mesh.boundary_facets:
            fh.write(" ".join(str(int(i)) for i in f) + "\n")


def load_mesh(path) -> Mesh:
    with open(path) as fh:
        lines = [ln.split() for ln in fh if ln.strip()]
    n, num_nodes, num_el = (int(v) for v in lines[0])
    nodes = np.array(lines[1:1 + num_nodes], dtype=float)
    elements = np.array(lines[1 + num_nodes:1 + num_nodes + num_el], dtype=np.int64)
    facets = np.array(lines[1 + num_nodes + num_el:], dtype=np.int64).reshape(-1, n)
    return Mesh(nodes.reshape(num_nodes, n), elements, facets)
