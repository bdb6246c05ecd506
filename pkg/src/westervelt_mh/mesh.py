"""Conforming 2D triangular meshes: generation, region tagging, point location and I/O.

A :class:`Mesh` is array based. Triangles are stored counter-clockwise and
boundary edges ``(a, b)`` are oriented along their owner triangle, so the
outward normal of an edge is the right-hand perpendicular of ``b - a``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

MESH_MAGIC = "mhmesh 1"
MAX_VERTICES = 20_000_000


class MeshError(ValueError):
    """Raised when a mesh violates one of its structural invariants."""


class MeshParseError(MeshError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable triangulation with per-triangle region tags.

    Parameters
    ----------
    vertices : (n, 2) float array
    triangles : (nt, 3) int array, counter-clockwise
    tags : (nt,) int array of region tags
    boundary : (nb, 2) int array of oriented boundary edges
    boundary_owner : (nb,) int array, index of the triangle owning each edge
    boundary_tags : (nb,) int array
    """

    vertices: np.ndarray
    triangles: np.ndarray
    tags: np.ndarray
    boundary: np.ndarray
    boundary_owner: np.ndarray
    boundary_tags: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("vertices", "triangles", "tags", "boundary",
                     "boundary_owner", "boundary_tags"):
            arr = getattr(self, name)
            arr.setflags(write=False)

    @classmethod
    def from_triangles(cls, vertices, triangles, tags=None, boundary_tag=1, meta=None):
        """Build a mesh from vertices and CCW triangles, deriving the boundary."""
        vertices = np.ascontiguousarray(vertices, dtype=float).reshape(-1, 2)
        triangles = np.ascontiguousarray(triangles, dtype=np.int64).reshape(-1, 3)
        if tags is None:
            tags = np.zeros(len(triangles), dtype=np.int64)
        tags = np.ascontiguousarray(tags, dtype=np.int64)
        boundary, owner = _boundary_edges(triangles)
        btags = np.full(len(boundary), boundary_tag, dtype=np.int64)
        return cls(vertices, triangles, tags, boundary, owner, btags, dict(meta or {}))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas)

    @property
    def area(self) -> float:
        return float(self.areas.sum())

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted vertex pairs."""
        e = np.sort(self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        return np.unique(e, axis=0)

    @cached_property
    def h_max(self) -> float:
        e = self.edges
        return float(np.linalg.norm(self.vertices[e[:, 1]] - self.vertices[e[:, 0]], axis=1).max())

    @cached_property
    def boundary_lengths(self) -> np.ndarray:
        d = self.vertices[self.boundary[:, 1]] - self.vertices[self.boundary[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @cached_property
    def normals(self) -> np.ndarray:
        """Outward unit normals of the boundary edges."""
        d = self.vertices[self.boundary[:, 1]] - self.vertices[self.boundary[:, 0]]
        n = np.column_stack([d[:, 1], -d[:, 0]])
        return n / np.linalg.norm(n, axis=1)[:, None]

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.boundary)

    def vertex_normal(self, v: int) -> np.ndarray:
        """Unit outward normal at boundary vertex ``v``: mean of its adjacent edge normals."""
        hit = np.any(self.boundary == v, axis=1)
        if not np.any(hit):
            raise MeshError(f"vertex {v} is not on the boundary")
        n = (self.normals[hit] * self.boundary_lengths[hit, None]).sum(axis=0)
        return n / np.linalg.norm(n)

    def min_angle(self) -> float:
        """Smallest interior angle of all triangles, in degrees."""
        p = self.vertices[self.triangles]
        angles = []
        for i in range(3):
            a = p[:, (i + 1) % 3] - p[:, i]
            b = p[:, (i + 2) % 3] - p[:, i]
            cosang = (a * b).sum(1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            angles.append(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))))
        return float(np.min(angles))

    def with_tags(self, tags) -> "Mesh":
        tags = np.asarray(tags, dtype=np.int64).copy()
        return Mesh(self.vertices, self.triangles, tags, self.boundary,
                    self.boundary_owner, self.boundary_tags, dict(self.meta))

    def stats(self) -> dict:
        return {
            "vertices": self.n_vertices,
            "triangles": self.n_triangles,
            "boundary_edges": len(self.boundary),
            "h_max": self.h_max,
            "min_angle_deg": self.min_angle(),
            "area": self.area,
        }

    @cached_property
    def _locator(self):
        centroids = self.centroids
        reach = np.linalg.norm(self.vertices[self.triangles] - centroids[:, None, :], axis=2).max()
        return cKDTree(centroids), float(reach)


def _boundary_edges(triangles):
    """Edges used by exactly one triangle, oriented along that triangle."""
    directed = triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    owner = np.repeat(np.arange(len(triangles)), 3)
    key = np.sort(directed, axis=1)
    _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    once = counts[inverse.ravel()] == 1
    return directed[once].copy(), owner[once].copy()


def validate(mesh: Mesh) -> None:
    """Check every structural invariant, raising :class:`MeshError` on the first violation."""
    v, t = mesh.vertices, mesh.triangles
    if v.ndim != 2 or v.shape[1] != 2:
        raise MeshError("vertices must be an (n, 2) array")
    if not np.all(np.isfinite(v)):
        raise MeshError("vertex coordinates must be finite")
    if t.size and (t.min() < 0 or t.max() >= len(v)):
        raise MeshError("triangle references a vertex index out of range")
    if len(mesh.tags) != len(t):
        raise MeshError("one region tag per triangle is required")
    distinct = (t[:, 0] != t[:, 1]) & (t[:, 1] != t[:, 2]) & (t[:, 0] != t[:, 2])
    if not distinct.all():
        raise MeshError(f"triangle {int(np.argmin(distinct))} has repeated vertices")
    sa = mesh.signed_areas
    if np.any(sa <= 0):
        bad = int(np.argmax(sa <= 0))
        raise MeshError(f"triangle {bad} is not counter-clockwise (signed area {sa[bad]:.3e})")

    key = np.sort(t[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    _, counts = np.unique(key, axis=0, return_counts=True)
    if np.any(counts > 2):
        raise MeshError("non-conforming mesh: an edge is shared by more than two triangles")

    expected, owner = _boundary_edges(t)
    got = {tuple(e) for e in mesh.boundary.tolist()}
    if got != {tuple(e) for e in expected.tolist()} or len(got) != len(mesh.boundary):
        raise MeshError("boundary edges do not match the edges used by exactly one triangle "
                        "(or are not oriented along their owner)")
    owner_of = {tuple(e): o for e, o in zip(expected.tolist(), owner.tolist())}
    for i, (e, o) in enumerate(zip(mesh.boundary.tolist(), mesh.boundary_owner.tolist())):
        if owner_of[tuple(e)] != o:
            raise MeshError(f"boundary edge {i} names the wrong owner triangle {o}")
    if len(mesh.boundary_tags) != len(mesh.boundary):
        raise MeshError("one tag per boundary edge is required")

    # closed loops: every boundary vertex starts exactly one edge and ends exactly one
    if len(mesh.boundary):
        starts = np.bincount(mesh.boundary[:, 0], minlength=len(v))
        ends = np.bincount(mesh.boundary[:, 1], minlength=len(v))
        if np.any(starts != ends) or np.any(starts > 1):
            raise MeshError("boundary edges do not form closed simple loops")


def generate_rect_mesh(x0: float, y0: float, x1: float, y1: float, nx: int, ny: int) -> Mesh:
    """Structured rectangle mesh with diagonals alternating in a checkerboard pattern."""
    if not all(math.isfinite(float(z)) for z in (x0, y0, x1, y1)):
        raise ValueError("rectangle extents must be finite")
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate rectangle extents ({x0}, {y0})-({x1}, {y1})")
    nx, ny = int(nx), int(ny)
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be at least 1")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    j, i = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    i, j = i.ravel(), j.ravel()
    sw = j * (nx + 1) + i
    se, nw = sw + 1, sw + nx + 1
    ne = nw + 1
    flip = (i + j) % 2 == 1
    # even cells split along sw-ne, odd cells along se-nw
    t1 = np.where(flip[:, None], np.column_stack([sw, se, nw]), np.column_stack([sw, se, ne]))
    t2 = np.where(flip[:, None], np.column_stack([se, ne, nw]), np.column_stack([sw, ne, nw]))
    triangles = np.stack([t1, t2], axis=1).reshape(-1, 3)
    return Mesh.from_triangles(vertices, triangles,
                               meta={"kind": "rect", "bounds": [x0, y0, x1, y1]})


def _zip_rings(inner, inner_ang, outer, outer_ang):
    """Triangulate the annulus between two closed rings given in increasing-angle order."""
    na, nb = len(inner), len(outer)
    # events: advancing along the inner ring (kind 0) or the outer ring (kind 1),
    # triggered half-way between consecutive vertices so each ring's current vertex
    # stays the one nearest in angle
    a_next = np.append(inner_ang[1:], inner_ang[0] + 2 * np.pi)
    b_next = np.append(outer_ang[1:], outer_ang[0] + 2 * np.pi)
    ang = np.concatenate([a_next - np.pi / na, b_next - np.pi / nb])
    kind = np.concatenate([np.zeros(na, int), np.ones(nb, int)])
    order = np.lexsort((kind, ang))
    kind = kind[order]
    ia = np.cumsum(kind == 0)  # inner position after each event
    ib = np.cumsum(kind == 1)
    tris = np.empty((na + nb, 3), dtype=np.int64)
    adv_a = kind == 0
    # inner advance: (A_{i-1}, B_j, A_i)
    tris[adv_a, 0] = inner[(ia[adv_a] - 1) % na]
    tris[adv_a, 1] = outer[ib[adv_a] % nb]
    tris[adv_a, 2] = inner[ia[adv_a] % na]
    # outer advance: (A_i, B_{j-1}, B_j)
    adv_b = ~adv_a
    tris[adv_b, 0] = inner[ia[adv_b] % na]
    tris[adv_b, 1] = outer[(ib[adv_b] - 1) % nb]
    tris[adv_b, 2] = outer[ib[adv_b] % nb]
    return tris


def generate_disk_mesh(radius: float, center=(0.0, 0.0), target_h: float = 0.01) -> Mesh:
    """Disk mesh from concentric rings; ring ``i`` carries ``6 i`` equally spaced vertices.

    Ring spacing is ``radius / ceil(radius / (0.85 target_h))``; the longest edge
    (a ring-to-ring diagonal) stays below ``1.25 target_h``.
    """
    radius, target_h = float(radius), float(target_h)
    cx, cy = (float(c) for c in center)
    if not all(math.isfinite(z) for z in (radius, target_h, cx, cy)):
        raise ValueError("disk parameters must be finite")
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if not 0 < target_h < radius:
        raise ValueError(f"target_h must lie in (0, radius), got {target_h}")
    n_rings = math.ceil(radius / (0.85 * target_h) - 1e-9)
    n_vertices = 1 + 3 * n_rings * (n_rings + 1)
    if n_vertices > MAX_VERTICES:
        raise MemoryError(f"target_h={target_h} would need {n_vertices} vertices "
                          f"(limit {MAX_VERTICES})")

    pts = [np.zeros((1, 2))]
    rings = [np.array([0])]
    angles = [np.array([0.0])]
    start = 1
    for i in range(1, n_rings + 1):
        r = radius * i / n_rings
        n = 6 * i
        th = 2 * np.pi * np.arange(n) / n
        pts.append(np.column_stack([r * np.cos(th), r * np.sin(th)]))
        rings.append(np.arange(start, start + n))
        angles.append(th)
        start += n
    vertices = np.concatenate(pts) + np.array([cx, cy])

    tris = []
    # central fan
    r1 = rings[1]
    tris.append(np.column_stack([np.zeros(len(r1), int), r1, np.roll(r1, -1)]))
    for i in range(1, n_rings):
        tris.append(_zip_rings(rings[i], angles[i], rings[i + 1], angles[i + 1]))
    triangles = np.concatenate(tris)
    mesh = Mesh.from_triangles(vertices, triangles,
                               meta={"kind": "disk", "center": [cx, cy], "radius": radius,
                                     "target_h": target_h})
    return mesh


@dataclass(frozen=True)
class DiskShape:
    center: tuple
    radius: float

    def contains(self, pts):
        d = np.asarray(pts) - np.asarray(self.center, dtype=float)
        return np.hypot(d[..., 0], d[..., 1]) <= self.radius


@dataclass(frozen=True)
class HalfPlaneShape:
    """Points ``x`` with ``normal . x >= offset``."""

    normal: tuple
    offset: float

    def contains(self, pts):
        return np.asarray(pts) @ np.asarray(self.normal, dtype=float) >= self.offset


def tag_region(mesh: Mesh, shape, tag: int) -> tuple[Mesh, int]:
    """Retag every triangle whose centroid lies in ``shape``.

    Returns the new mesh and the number of triangles retagged (zero is allowed).
    """
    inside = shape.contains(mesh.centroids)
    tags = mesh.tags.copy()
    tags[inside] = int(tag)
    return mesh.with_tags(tags), int(inside.sum())


def barycentric(mesh: Mesh, tri: np.ndarray, pts: np.ndarray) -> np.ndarray:
    p = mesh.vertices[mesh.triangles[tri]]
    v0 = p[..., 0, :]
    d1 = p[..., 1, :] - v0
    d2 = p[..., 2, :] - v0
    det = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
    r = pts - v0
    l1 = (r[..., 0] * d2[..., 1] - r[..., 1] * d2[..., 0]) / det
    l2 = (d1[..., 0] * r[..., 1] - d1[..., 1] * r[..., 0]) / det
    return np.stack([1.0 - l1 - l2, l1, l2], axis=-1)


def locate_point(mesh: Mesh, p, tol: float = 1e-12):
    """Find the triangle containing ``p``.

    Returns ``(triangle_index, barycentric_coords)`` or ``None`` if ``p`` lies
    outside the mesh. Coordinates within ``tol`` of the triangle are clamped
    and renormalised.
    """
    p = np.asarray(p, dtype=float)
    if p.shape != (2,) or not np.all(np.isfinite(p)):
        return None
    tree, reach = mesh._locator
    cand = tree.query_ball_point(p, reach * (1 + 1e-9))
    if not cand:
        return None
    cand = np.asarray(sorted(cand))
    lam = barycentric(mesh, cand, np.broadcast_to(p, (len(cand), 2)))
    worst = lam.min(axis=1)
    k = int(np.argmax(worst))
    if worst[k] < -tol:
        return None
    lam_k = np.clip(lam[k], 0.0, None)
    return int(cand[k]), lam_k / lam_k.sum()


def locate_points(mesh: Mesh, pts):
    """Vectorised :func:`locate_point`; missing points get triangle index -1."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    tri = np.full(len(pts), -1, dtype=np.int64)
    lam = np.full((len(pts), 3), np.nan)
    for i, p in enumerate(pts):
        hit = locate_point(mesh, p)
        if hit is not None:
            tri[i], lam[i] = hit
    return tri, lam


def write_mesh(mesh: Mesh, path) -> None:
    lines = [MESH_MAGIC, f"vertices {mesh.n_vertices}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines.append(f"triangles {mesh.n_triangles}")
    lines += [f"{a} {b} {c} {t}" for (a, b, c), t in zip(mesh.triangles.tolist(), mesh.tags.tolist())]
    lines.append(f"boundary {len(mesh.boundary)}")
    lines += [f"{a} {b} {o} {t}" for (a, b), o, t in
              zip(mesh.boundary.tolist(), mesh.boundary_owner.tolist(), mesh.boundary_tags.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    """Parse the ``mhmesh 1`` ASCII format and validate the result."""
    text = Path(path).read_text().splitlines()
    pos = 0

    def next_line():
        nonlocal pos
        while pos < len(text) and not text[pos].strip():
            pos += 1
        if pos >= len(text):
            raise MeshParseError(pos + 1, "unexpected end of file")
        pos += 1
        return pos, text[pos - 1].split()

    def section(name):
        lineno, tok = next_line()
        if len(tok) != 2 or tok[0] != name or not tok[1].isdigit():
            raise MeshParseError(lineno, f"expected '{name} <count>', got {' '.join(tok)!r}")
        return int(tok[1])

    def rows(count, ncols, conv):
        out = []
        for _ in range(count):
            lineno, tok = next_line()
            if len(tok) != ncols:
                raise MeshParseError(lineno, f"expected {ncols} fields, got {len(tok)}")
            try:
                out.append([conv(s) for s in tok])
            except ValueError as exc:
                raise MeshParseError(lineno, str(exc)) from None
        return out

    lineno, tok = next_line()
    if " ".join(tok) != MESH_MAGIC:
        raise MeshParseError(lineno, f"expected header {MESH_MAGIC!r}")
    nv = section("vertices")
    verts = np.array(rows(nv, 2, float), dtype=float).reshape(-1, 2)
    nt = section("triangles")
    tri = np.array(rows(nt, 4, int), dtype=np.int64).reshape(-1, 4)
    nb = section("boundary")
    bnd = np.array(rows(nb, 4, int), dtype=np.int64).reshape(-1, 4)

    mesh = Mesh(verts, tri[:, :3].copy(), tri[:, 3].copy(), bnd[:, :2].copy(),
                bnd[:, 2].copy(), bnd[:, 3].copy(), {"source": str(path)})
    validate(mesh)
    return mesh
