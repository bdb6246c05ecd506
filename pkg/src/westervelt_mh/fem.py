"""P1 finite elements: quadrature, matrix and load assembly, and the per-harmonic Helmholtz operator.

All matrices are returned as complex ``scipy.sparse.csr_matrix`` with sorted
indices. They are complex symmetric (``A.T == A``), never Hermitian.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

# (barycentric points, weights summing to one)
_A, _B = 0.445948490915965, 0.091576213509771
TRIANGLE_RULES = {
    "deg3": (np.array([[1 / 3, 1 / 3, 1 / 3], [0.6, 0.2, 0.2], [0.2, 0.6, 0.2], [0.2, 0.2, 0.6]]),
             np.array([-27 / 48, 25 / 48, 25 / 48, 25 / 48])),
    "deg4": (np.array([[1 - 2 * _A, _A, _A], [_A, 1 - 2 * _A, _A], [_A, _A, 1 - 2 * _A],
                       [1 - 2 * _B, _B, _B], [_B, 1 - 2 * _B, _B], [_B, _B, 1 - 2 * _B]]),
             np.array([0.223381589678011] * 3 + [0.109951743655322] * 3)),
}
_G = 0.5 / np.sqrt(3.0)
EDGE_RULE = (np.array([0.5 - _G, 0.5 + _G]), np.array([0.5, 0.5]))


class AssemblyError(ValueError):
    pass


@lru_cache(maxsize=None)
def triangle_rule(rule: str = "deg3", refine: int = 1):
    """Barycentric points and weights of ``rule`` composed over ``refine**2`` sub-triangles."""
    bary, w = TRIANGLE_RULES[rule]
    if refine == 1:
        return bary, w
    s = int(refine)
    subs = []
    for i in range(s):
        for j in range(s - i):
            subs.append([(i, j), (i + 1, j), (i, j + 1)])
            if i + j <= s - 2:
                subs.append([(i + 1, j), (i + 1, j + 1), (i, j + 1)])
    pts = []
    for tri in subs:
        # lattice (i, j) -> barycentric (1 - (i+j)/s, i/s, j/s)
        B = np.array([[1 - (i + j) / s, i / s, j / s] for i, j in tri])
        pts.append(bary @ B)
    pts = np.concatenate(pts)
    weights = np.tile(w, len(subs)) / len(subs)
    pts.setflags(write=False)
    weights.setflags(write=False)
    return pts, weights


def quadrature_points(mesh, rule="deg3", refine=1, elements=None):
    """Physical quadrature points, shape ``(nt, nq, 2)``, plus barycentric points and weights."""
    bary, w = triangle_rule(rule, refine)
    tri = mesh.triangles if elements is None else mesh.triangles[elements]
    xy = np.einsum("qi,tid->tqd", bary, mesh.vertices[tri])
    return xy, bary, w


def interpolate_at(mesh, nodal, bary, elements=None):
    """P1 interpolation of nodal values (shape ``(..., n)``) at barycentric points of each element."""
    tri = mesh.triangles if elements is None else mesh.triangles[elements]
    nodal = np.asarray(nodal)
    return np.einsum("qi,...ti->...tq", bary, nodal[..., tri])


def _csr(rows, cols, vals, n):
    A = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def _p1_gradients(mesh):
    p = mesh.vertices[mesh.triangles]
    area = mesh.signed_areas
    if np.any(area <= 0):
        raise AssemblyError(f"degenerate or clockwise triangle {int(np.argmax(area <= 0))}")
    # grad lambda_i = perp(p_{i+2} - p_{i+1}) / (2 area), perp(x, y) = (-y, x) rotated inward
    e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    grads = np.stack([-e[..., 1], e[..., 0]], axis=-1) / (2 * area[:, None, None])
    return grads, area


def _element_pattern(mesh):
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1)
    cols = np.tile(t, (1, 3))
    return rows, cols


def assemble_stiffness(mesh):
    """``K_ij = int grad phi_i . grad phi_j``."""
    grads, area = _p1_gradients(mesh)
    Ke = np.einsum("tid,tjd->tij", grads, grads) * area[:, None, None]
    rows, cols = _element_pattern(mesh)
    return _csr(rows, cols, Ke.reshape(-1, 9).astype(complex), mesh.n_vertices)


_LOCAL_MASS = (np.ones((3, 3)) + np.eye(3)) / 12.0


def assemble_mass(mesh, coeff=1.0):
    """``M_ij = int coeff phi_i phi_j`` with ``coeff`` constant per element."""
    coeff = np.broadcast_to(np.asarray(coeff, dtype=complex), (mesh.n_triangles,)) \
        if np.ndim(coeff) == 0 else np.asarray(coeff, dtype=complex)
    if coeff.shape != (mesh.n_triangles,):
        raise AssemblyError(f"mass coefficient needs {mesh.n_triangles} entries, got {coeff.shape}")
    _, area = _p1_gradients(mesh)
    Me = (coeff * area)[:, None, None] * _LOCAL_MASS
    rows, cols = _element_pattern(mesh)
    return _csr(rows, cols, Me.reshape(-1, 9), mesh.n_vertices)


_LOCAL_EDGE_MASS = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0


def assemble_boundary_mass(mesh, coeff=1.0):
    """``B_ij = int_{boundary} coeff phi_i phi_j`` with ``coeff`` constant per boundary edge."""
    nb = len(mesh.boundary)
    coeff = np.full(nb, coeff, dtype=complex) if np.ndim(coeff) == 0 else np.asarray(coeff, dtype=complex)
    if coeff.shape != (nb,):
        raise AssemblyError(f"boundary coefficient needs {nb} entries, got {coeff.shape}")
    Be = (coeff * mesh.boundary_lengths)[:, None, None] * _LOCAL_EDGE_MASS
    e = mesh.boundary
    rows = np.repeat(e, 2, axis=1)
    cols = np.tile(e, (1, 2))
    return _csr(rows, cols, Be.reshape(-1, 4), mesh.n_vertices)


def load_from_values(mesh, values, bary, weights, elements=None, coeff=None):
    """Assemble ``int v phi_j`` from values ``v`` at the quadrature points of each element.

    ``values`` has shape ``(nt, nq)`` over ``elements`` (all triangles by
    default); ``coeff`` is an optional per-element multiplier.
    """
    values = np.asarray(values, dtype=complex)
    if not np.all(np.isfinite(values)):
        raise AssemblyError("load integrand produced non-finite values")
    if elements is None:
        tri, area = mesh.triangles, mesh.areas
    else:
        tri, area = mesh.triangles[elements], mesh.areas[elements]
    local = np.einsum("tq,q,qi->ti", values, weights, bary) * area[:, None]
    if coeff is not None:
        local = local * np.asarray(coeff)[:, None]
    out = np.zeros(mesh.n_vertices, dtype=complex)
    np.add.at(out, tri.ravel(), local.ravel())
    return out


def assemble_load(mesh, f, rule="deg3", refine=1, elements=None, coeff=None):
    """``int f phi_j`` where ``f`` maps an array of points ``(..., 2)`` to values ``(...)``."""
    xy, bary, w = quadrature_points(mesh, rule, refine, elements)
    values = np.asarray(f(xy))
    return load_from_values(mesh, values, bary, w, elements, coeff)


def boundary_quadrature_points(mesh):
    t, _ = EDGE_RULE
    a = mesh.vertices[mesh.boundary[:, 0]]
    b = mesh.vertices[mesh.boundary[:, 1]]
    return a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]


def assemble_boundary_load(mesh, g):
    """``int_{boundary} g phi_j`` by 2-point Gauss per edge.

    ``g(points, normals)`` receives points of shape ``(nb, 2, 2)`` and the
    matching outward normals, and returns values of shape ``(nb, 2)``.
    """
    t, w = EDGE_RULE
    xy = boundary_quadrature_points(mesh)
    normals = np.broadcast_to(mesh.normals[:, None, :], xy.shape)
    values = np.asarray(g(xy, normals), dtype=complex)
    if not np.all(np.isfinite(values)):
        raise AssemblyError("boundary integrand produced non-finite values")
    basis = np.column_stack([1 - t, t])  # (nq, 2)
    local = np.einsum("eq,q,qi->ei", values, w, basis) * mesh.boundary_lengths[:, None]
    out = np.zeros(mesh.n_vertices, dtype=complex)
    np.add.at(out, mesh.boundary.ravel(), local.ravel())
    return out


@dataclass(frozen=True)
class HelmholtzOperator:
    """``K - m^2 M[kappa^2] + B[i beta m omega + gamma]`` for harmonic ``m``."""

    matrix: sp.csr_matrix
    m: int
    kappa2: np.ndarray
    stiffness: sp.csr_matrix | None = None
    boundary: sp.csr_matrix | None = None
    mesh: object = None

    @property
    def shape(self):
        return self.matrix.shape

    def shifted_matrix(self, shift: float):
        """Same operator with ``kappa^2`` replaced by ``(1 - i shift) kappa^2``."""
        M = assemble_mass(self.mesh, self.kappa2 * (1 - 1j * shift))
        A = (self.stiffness - (self.m * self.m) * M + self.boundary).tocsr()
        A.sort_indices()
        return A


def build_helmholtz(mesh, medium, m: int, stiffness=None) -> HelmholtzOperator:
    if int(m) != m or m < 1:
        raise ValueError(f"harmonic index must be >= 1, got {m} (the m=0 component is identically zero)")
    m = int(m)
    K = assemble_stiffness(mesh) if stiffness is None else stiffness
    kappa2 = medium.kappa2(mesh, m)
    B = assemble_boundary_mass(mesh, medium.robin_coefficient(mesh, m))
    A = (K - (m * m) * assemble_mass(mesh, kappa2) + B).tocsr()
    A.sort_indices()
    return HelmholtzOperator(A, m, kappa2, K, B, mesh)


def l2_norm(mesh, u, mass=None) -> float:
    """``||u||_{L2}`` of a P1 field through the mass-matrix quadratic form."""
    M = assemble_mass(mesh) if mass is None else mass
    u = np.asarray(u)
    return float(np.sqrt(max(np.real(np.vdot(u, M @ u)), 0.0)))


def write_matrix_market(A, path) -> None:
    """Dump a complex sparse matrix in Matrix Market coordinate format."""
    A = sp.coo_matrix(A)
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate complex general\n")
        fh.write(f"{A.shape[0]} {A.shape[1]} {A.nnz}\n")
        for i, j, v in zip(A.row, A.col, A.data):
            fh.write(f"{i + 1} {j + 1} {float(v.real)!r} {float(v.imag)!r}\n")
