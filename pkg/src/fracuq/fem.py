"""P1 Galerkin pieces on triangulations of the unit square.

Assembles the mass matrix, the diffusivity-weighted stiffness matrix
(affine in the random parameters, so the per-element basis averages are
precomputed once and reused across samples), load vectors, Ritz
projections of the initial data, and the mean-value functional.
Homogeneous Dirichlet conditions are imposed by eliminating boundary
vertices at assembly time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, ValidationError

__all__ = [
    "TriMesh",
    "triangulate_unit_square",
    "save_mesh",
    "load_mesh",
    "assemble_mass",
    "assemble_stiffness",
    "StiffnessAssembler",
    "load_vector",
    "ritz_projection",
    "phi_integrals",
    "apply_functional",
    "interpolate_vertices",
    "eval_structured",
    "prolong_structured",
]


@dataclass(frozen=True)
class TriMesh:
    """Conforming triangulation with interior-dof numbering.

    vertices: (nv, 2); triangles: (nt, 3) counterclockwise vertex triples;
    boundary: (nv,) bool; interior_index: vertex id -> dof id, -1 on the
    boundary; h: maximal element diameter.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray
    interior_index: np.ndarray
    h: float
    n_div: int | None = None  # set for the structured unit-square mesh

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def n_dofs(self) -> int:
        return int(np.max(self.interior_index)) + 1 if np.any(self.interior_index >= 0) else 0


def _element_geometry(mesh: TriMesh):
    """Areas and constant P1 gradients per element."""
    v = mesh.vertices[mesh.triangles]  # (nt, 3, 2)
    d1 = v[:, 1] - v[:, 0]
    d2 = v[:, 2] - v[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    if np.any(det <= 0):
        raise ValidationError("mesh contains degenerate or misoriented triangles")
    area = 0.5 * det
    grads = np.empty((mesh.n_triangles, 3, 2))
    # gradient of the barycentric function of vertex i is the rotated opposite edge
    e0 = v[:, 2] - v[:, 1]
    e1 = v[:, 0] - v[:, 2]
    e2 = v[:, 1] - v[:, 0]
    for i, e in enumerate((e0, e1, e2)):
        grads[:, i, 0] = -e[:, 1] / det
        grads[:, i, 1] = e[:, 0] / det
    return area, grads


def _edge_midpoints(mesh: TriMesh):
    """Element quadrature points (edge midpoints, degree-2 exact) as (nt, 3, 2)."""
    v = mesh.vertices[mesh.triangles]
    return 0.5 * (v[:, [1, 2, 0]] + v[:, [2, 0, 1]])


# P1 basis values at the three edge midpoints; row = midpoint, col = vertex
_MIDPOINT_BASIS = np.array([[0.0, 0.5, 0.5],
                            [0.5, 0.0, 0.5],
                            [0.5, 0.5, 0.0]])


def triangulate_unit_square(n_div: int) -> TriMesh:
    """Structured mesh: each of n_div^2 cells split along the (1,1) diagonal."""
    if n_div < 1:
        raise ConfigurationError("n_div must be >= 1")
    g = np.linspace(0.0, 1.0, n_div + 1)
    X, Y = np.meshgrid(g, g, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return i * (n_div + 1) + j

    tris = []
    for i in range(n_div):
        for j in range(n_div):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    tris = np.array(tris, dtype=np.int64)
    on_bdy = (verts[:, 0] == 0) | (verts[:, 0] == 1) | (verts[:, 1] == 0) | (verts[:, 1] == 1)
    interior = np.full(verts.shape[0], -1, dtype=np.int64)
    interior[~on_bdy] = np.arange(np.count_nonzero(~on_bdy))
    return TriMesh(vertices=verts, triangles=tris, boundary=on_bdy,
                   interior_index=interior, h=math.sqrt(2.0) / n_div, n_div=n_div)


def save_mesh(mesh: TriMesh, path):
    with open(path, "w") as fh:
        fh.write(f"{mesh.n_vertices}\n")
        for (x, y), b in zip(mesh.vertices, mesh.boundary):
            fh.write(f"{float(x):.17g} {float(y):.17g} {int(b)}\n")
        fh.write(f"{mesh.n_triangles}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"{i} {j} {k}\n")


def load_mesh(path) -> TriMesh:
    with open(path) as fh:
        tokens = fh.read().split()
    it = iter(tokens)
    try:
        nv = int(next(it))
        verts = np.empty((nv, 2))
        bdy = np.empty(nv, dtype=bool)
        for i in range(nv):
            verts[i, 0] = float(next(it))
            verts[i, 1] = float(next(it))
            bdy[i] = bool(int(next(it)))
        nt = int(next(it))
        tris = np.empty((nt, 3), dtype=np.int64)
        for i in range(nt):
            tris[i] = [int(next(it)), int(next(it)), int(next(it))]
    except StopIteration as exc:
        raise ValidationError(f"{path}: truncated mesh file") from exc
    interior = np.full(nv, -1, dtype=np.int64)
    interior[~bdy] = np.arange(np.count_nonzero(~bdy))
    v = verts[tris]
    diam = max(np.linalg.norm(v[:, a] - v[:, b], axis=1).max()
               for a, b in ((0, 1), (1, 2), (2, 0)))
    mesh = TriMesh(vertices=verts, triangles=tris, boundary=bdy,
                   interior_index=interior, h=float(diam))
    _element_geometry(mesh)  # validates orientation / degeneracy
    return mesh


def _assemble(mesh: TriMesh, local: np.ndarray, trimmed: bool) -> sp.csr_matrix:
    """Scatter per-element 3x3 blocks; `local` has shape (nt, 3, 3)."""
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    data = local.ravel()
    if trimmed:
        r = mesh.interior_index[rows]
        c = mesh.interior_index[cols]
        keep = (r >= 0) & (c >= 0)
        mat = sp.coo_matrix((data[keep], (r[keep], c[keep])),
                            shape=(mesh.n_dofs, mesh.n_dofs))
    else:
        mat = sp.coo_matrix((data, (rows, cols)),
                            shape=(mesh.n_vertices, mesh.n_vertices))
    out = mat.tocsr()
    out.sum_duplicates()
    return out


_MASS_LOCAL = np.array([[2.0, 1.0, 1.0],
                        [1.0, 2.0, 1.0],
                        [1.0, 1.0, 2.0]]) / 12.0


def assemble_mass(mesh: TriMesh, trimmed: bool = True) -> sp.csr_matrix:
    """Exact P1 mass matrix (element block area/12 * [[2,1,1],[1,2,1],[1,1,2]])."""
    area, _ = _element_geometry(mesh)
    local = area[:, None, None] * _MASS_LOCAL[None]
    return _assemble(mesh, local, trimmed)


class StiffnessAssembler:
    """Stiffness matrices D(y) for a fixed (mesh, field) pair.

    The diffusivity enters each element through its 3-point Gauss average,
    which is affine in y, so per-element basis averages are precomputed and
    each sample only combines them.
    """

    def __init__(self, mesh: TriMesh, field):
        self.mesh = mesh
        self.field = field
        area, grads = _element_geometry(mesh)
        self.area = area
        # geometric element stiffness: area * grad_i . grad_j, shape (nt, 3, 3)
        self.k_geom = area[:, None, None] * np.einsum("tid,tjd->tij", grads, grads)
        mid = _edge_midpoints(mesh)  # (nt, 3, 2)
        x1 = mid[:, :, 0].ravel()
        x2 = mid[:, :, 1].ravel()
        nt = mesh.n_triangles
        self.kbar0 = field.kappa0(x1, x2).reshape(nt, 3).mean(axis=1)
        z = len(field)
        if z:
            psi = field.basis_values(x1, x2)  # (z, nt*3)
            self.psibar = psi.reshape(z, nt, 3).mean(axis=2)
        else:
            self.psibar = np.zeros((0, nt))

    def element_kappa(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.size > self.psibar.shape[0]:
            raise ConfigurationError(
                f"parameter vector length {y.size} exceeds basis size {self.psibar.shape[0]}")
        kbar = self.kbar0.copy()
        if y.size:
            kbar += y @ self.psibar[: y.size]
        return kbar

    def matrix(self, y, trimmed: bool = True, require_positive: bool = False) -> sp.csr_matrix:
        """Assemble D(y).

        With ``require_positive`` the element-averaged diffusivity must be
        strictly positive.  The default is lenient: the built-in example
        field dips slightly negative for extreme parameter vectors (e.g.
        y_j = -1/2 for all j), yet the resulting time-stepping systems stay
        nonsingular and are handled by the direct solver.
        """
        kbar = self.element_kappa(y)
        if require_positive and np.any(kbar <= 0):
            raise ConfigurationError("diffusivity is nonpositive on some element")
        local = kbar[:, None, None] * self.k_geom
        return _assemble(self.mesh, local, trimmed)

    def ritz_rhs(self, y, grad_g) -> np.ndarray:
        """Right-hand side <kappa grad g, grad phi_p> with the same quadrature."""
        mesh = self.mesh
        mid = _edge_midpoints(mesh)
        x1 = mid[:, :, 0].ravel()
        x2 = mid[:, :, 1].ravel()
        gx, gy = grad_g(x1, x2)
        nt = mesh.n_triangles
        gg = np.stack([np.asarray(gx).reshape(nt, 3),
                       np.asarray(gy).reshape(nt, 3)], axis=-1)  # (nt, 3, 2)
        kq = self.field.kappa(x1, x2, y).reshape(nt, 3)
        _, grads = _element_geometry(mesh)
        # integral over K: area/3 * sum_q kappa(q) grad_g(q) . grad_phi_i
        contrib = np.einsum("tq,tqd,tid->ti", kq, gg, grads) * (self.area / 3.0)[:, None]
        rhs = np.zeros(mesh.n_dofs)
        dof = mesh.interior_index[mesh.triangles]
        np.add.at(rhs, dof[dof >= 0], contrib[dof >= 0])
        return rhs


def assemble_stiffness(mesh: TriMesh, field, y, trimmed: bool = True,
                       require_positive: bool = True) -> sp.csr_matrix:
    """One-shot stiffness assembly; rejects nonpositive diffusivity by default."""
    return StiffnessAssembler(mesh, field).matrix(
        y, trimmed=trimmed, require_positive=require_positive)


def load_vector(mesh: TriMesh, f, t_a: float, t_b: float) -> np.ndarray:
    """<f-bar, phi_p> for the time-average of f over (t_a, t_b).

    The time average uses 2-point Gauss (exact through cubics in t); space
    uses the degree-2 edge-midpoint rule.  f is f(x1, x2, t) vectorised in
    the spatial arguments, or a plain constant.
    """
    if not t_a < t_b:
        raise ConfigurationError("load_vector requires t_a < t_b")
    area, _ = _element_geometry(mesh)
    mid = _edge_midpoints(mesh)
    x1 = mid[:, :, 0].ravel()
    x2 = mid[:, :, 1].ravel()
    if callable(f):
        half = 0.5 * (t_b - t_a)
        c = 0.5 * (t_a + t_b)
        s = half / math.sqrt(3.0)
        fbar = 0.5 * (np.asarray(f(x1, x2, c - s), dtype=float)
                      + np.asarray(f(x1, x2, c + s), dtype=float))
        fbar = np.broadcast_to(fbar, x1.shape)
    else:
        fbar = np.full(x1.shape, float(f))
    nt = mesh.n_triangles
    fq = fbar.reshape(nt, 3)
    # entry i gets area/3 * sum_q f(q) phi_i(q)
    contrib = (fq @ _MIDPOINT_BASIS) * (area / 3.0)[:, None]
    rhs = np.zeros(mesh.n_dofs)
    dof = mesh.interior_index[mesh.triangles]
    np.add.at(rhs, dof[dof >= 0], contrib[dof >= 0])
    return rhs


def _load_vector_untrimmed(mesh: TriMesh, f, t_a: float, t_b: float) -> np.ndarray:
    """All-vertex variant of load_vector, used by tests (partition of unity)."""
    area, _ = _element_geometry(mesh)
    mid = _edge_midpoints(mesh)
    x1 = mid[:, :, 0].ravel()
    x2 = mid[:, :, 1].ravel()
    if callable(f):
        fbar = np.broadcast_to(np.asarray(f(x1, x2, 0.5 * (t_a + t_b)), dtype=float), x1.shape)
    else:
        fbar = np.full(x1.shape, float(f))
    fq = fbar.reshape(mesh.n_triangles, 3)
    contrib = (fq @ _MIDPOINT_BASIS) * (area / 3.0)[:, None]
    rhs = np.zeros(mesh.n_vertices)
    np.add.at(rhs, mesh.triangles.ravel(), contrib.ravel())
    return rhs


def ritz_projection(mesh: TriMesh, field, y, g, grad_g,
                    assembler: StiffnessAssembler | None = None) -> np.ndarray:
    """Coefficients of the energy projection R_h g onto the interior P1 space."""
    if assembler is None:
        assembler = StiffnessAssembler(mesh, field)
    D = assembler.matrix(y)
    rhs = assembler.ritz_rhs(y, grad_g)
    return spla.spsolve(D.tocsc(), rhs)


def phi_integrals(mesh: TriMesh) -> np.ndarray:
    """Integrals of the interior nodal basis functions (area/3 per element)."""
    area, _ = _element_geometry(mesh)
    w = np.zeros(mesh.n_dofs)
    dof = mesh.interior_index[mesh.triangles]
    contrib = np.repeat(area / 3.0, 3).reshape(-1, 3)
    np.add.at(w, dof[dof >= 0], contrib[dof >= 0])
    return w


def apply_functional(mesh: TriMesh, coeffs: np.ndarray) -> float:
    """Mean-value functional: integral of the P1 function over the domain."""
    return float(phi_integrals(mesh) @ np.asarray(coeffs, dtype=float))


def interpolate_vertices(mesh: TriMesh, func) -> np.ndarray:
    """Interior coefficients of the vertex interpolant of func(x1, x2)."""
    keep = mesh.interior_index >= 0
    v = mesh.vertices[keep]
    return np.asarray(func(v[:, 0], v[:, 1]), dtype=float)


def _full_vertex_values(n_div: int, interior_coeffs: np.ndarray) -> np.ndarray:
    vals = np.zeros((n_div + 1, n_div + 1))
    vals[1:-1, 1:-1] = np.asarray(interior_coeffs).reshape(n_div - 1, n_div - 1)
    return vals


def eval_structured(n_div: int, interior_coeffs: np.ndarray,
                    x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Evaluate a P1 function on the structured mesh at arbitrary points."""
    vals = _full_vertex_values(n_div, interior_coeffs)
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    i = np.clip((x1 * n_div).astype(int), 0, n_div - 1)
    j = np.clip((x2 * n_div).astype(int), 0, n_div - 1)
    xi = x1 * n_div - i
    eta = x2 * n_div - j
    c00 = vals[i, j]
    c10 = vals[i + 1, j]
    c01 = vals[i, j + 1]
    c11 = vals[i + 1, j + 1]
    lower = c00 * (1.0 - xi) + c10 * (xi - eta) + c11 * eta
    upper = c00 * (1.0 - eta) + c11 * xi + c01 * (eta - xi)
    return np.where(xi >= eta, lower, upper)


def prolong_structured(interior_coeffs: np.ndarray, n_coarse: int, n_fine: int) -> np.ndarray:
    """Interior coefficients on the fine structured mesh of the coarse P1 function.

    Exact (the coarse space is contained in the fine one when n_fine is a
    multiple of n_coarse and the diagonals align).
    """
    if n_fine % n_coarse:
        raise ConfigurationError("prolongation requires n_fine to be a multiple of n_coarse")
    g = np.linspace(0.0, 1.0, n_fine + 1)[1:-1]
    X1, X2 = np.meshgrid(g, g, indexing="ij")
    return eval_structured(n_coarse, interior_coeffs, X1.ravel(), X2.ravel())
