"""Degree-of-freedom numbering, element matrices and global assembly for

    a(u, v) = int 2 mu eps(u):eps(v) + lam div(u) div(v)

on X_D x X_D, plus the reference-element form used by the inexact
interior solver.

Vector DOFs are numbered component-major: global index ``c * n_scalar + s``.
Element-local vector DOFs follow the same convention, ``c * nloc + i``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .febasis import (EDGE, INTERIOR, VERTEX, ReferenceBasis, build_basis,
                      build_quadrature, gauss_line, tabulate)
from .mesh import REFERENCE_VERTICES, Mesh, affine_maps


class AssemblyError(ValueError):
    pass


# ---------------------------------------------------------------------------
# DOF map

@dataclass(frozen=True)
class DofMap:
    n_scalar: int
    l2g: np.ndarray            # (nt, nloc) scalar global index
    sign: np.ndarray           # (nt, nloc) orientation sign
    scalar_kind: np.ndarray
    scalar_entity: np.ndarray  # vertex / edge / element id
    scalar_q: np.ndarray
    dirichlet_mask: np.ndarray  # per vector DOF
    free: np.ndarray            # vector DOFs of X_D, increasing
    full_to_free: np.ndarray    # -1 on masked DOFs

    @property
    def n_total(self) -> int:
        return len(self.free)

    @property
    def n_full(self) -> int:
        return 2 * self.n_scalar

    def _free_attr(self, arr):
        return arr[self.free % self.n_scalar]

    @cached_property
    def kind(self) -> np.ndarray:
        return self._free_attr(self.scalar_kind)

    @cached_property
    def entity(self) -> np.ndarray:
        return self._free_attr(self.scalar_entity)

    @cached_property
    def edge_degree(self) -> np.ndarray:
        return self._free_attr(self.scalar_q)

    @cached_property
    def component(self) -> np.ndarray:
        return self.free // self.n_scalar

    @cached_property
    def interior(self) -> np.ndarray:
        """Free-numbering indices of interior DOFs."""
        return np.flatnonzero(self.kind == INTERIOR)

    @cached_property
    def boundary(self) -> np.ndarray:
        """Free-numbering indices of vertex and edge DOFs (the boundary space)."""
        return np.flatnonzero(self.kind != INTERIOR)

    @property
    def n_interior(self) -> int:
        return len(self.interior)

    @property
    def n_boundary(self) -> int:
        return len(self.boundary)

    @cached_property
    def coarse_mask(self) -> np.ndarray:
        """Over the boundary DOFs: vertex DOFs and edge DOFs with edge degree <= 4."""
        k, q = self.kind[self.boundary], self.edge_degree[self.boundary]
        return (k == VERTEX) | ((k == EDGE) & (q <= 4))

    @property
    def n_coarse(self) -> int:
        return int(self.coarse_mask.sum())

    def element_dofs(self, K: int) -> np.ndarray:
        """Full vector indices of element K's local DOFs (component-major)."""
        g = self.l2g[K]
        return np.concatenate([g, g + self.n_scalar])

    def element_signs(self, K: int) -> np.ndarray:
        return np.tile(self.sign[K], 2)

    def element_free_dofs(self, K: int) -> np.ndarray:
        return self.full_to_free[self.element_dofs(K)]


def build_dofmap(mesh: Mesh, basis: ReferenceBasis) -> DofMap:
    p = basis.degree
    nv, ne, nt = mesh.n_vertices, mesh.n_edges, mesh.n_triangles
    n_edge_fn = max(p - 1, 0)
    n_int = len(basis.interior_ids)
    n_scalar = nv + ne * n_edge_fn + nt * n_int

    kind = np.empty(n_scalar, dtype=np.int64)
    entity = np.empty(n_scalar, dtype=np.int64)
    qdeg = np.empty(n_scalar, dtype=np.int64)
    kind[:nv], entity[:nv], qdeg[:nv] = VERTEX, np.arange(nv), 1
    off = nv
    for e in range(ne):
        sl = slice(off + e * n_edge_fn, off + (e + 1) * n_edge_fn)
        kind[sl], entity[sl], qdeg[sl] = EDGE, e, np.arange(2, p + 1)
    off += ne * n_edge_fn
    for K in range(nt):
        sl = slice(off + K * n_int, off + (K + 1) * n_int)
        kind[sl], entity[sl], qdeg[sl] = INTERIOR, K, 0

    nloc = basis.n
    l2g = np.empty((nt, nloc), dtype=np.int64)
    sign = np.ones((nt, nloc))
    vid, iid = basis.vertex_ids, basis.interior_ids
    for K, tri in enumerate(mesh.triangles):
        l2g[K, vid] = tri
        for k in range(3):
            e = mesh.tri_edges[K, k]
            ids = basis.edge_ids(k)
            l2g[K, ids] = nv + e * n_edge_fn + np.arange(n_edge_fn)
            i, j = tri[(k + 1) % 3], tri[(k + 2) % 3]
            if i > j:  # local orientation opposite to global (lo -> hi)
                sign[K, ids] = (-1.0) ** basis.edge_degree[ids]
        l2g[K, iid] = off + K * n_int + np.arange(n_int)

    mask_s = np.zeros(n_scalar, dtype=bool)
    for e in mesh.edges_with_tag("dirichlet"):
        mask_s[list(mesh.edges[e])] = True
        mask_s[nv + e * n_edge_fn: nv + (e + 1) * n_edge_fn] = True
    mask = np.concatenate([mask_s, mask_s])
    free = np.flatnonzero(~mask)
    full_to_free = -np.ones(2 * n_scalar, dtype=np.int64)
    full_to_free[free] = np.arange(len(free))
    return DofMap(n_scalar=n_scalar, l2g=l2g, sign=sign, scalar_kind=kind,
                  scalar_entity=entity, scalar_q=qdeg, dirichlet_mask=mask,
                  free=free, full_to_free=full_to_free)


# ---------------------------------------------------------------------------
# element matrices

def stiffness_from_blocks(M, mu: float, lam: float) -> np.ndarray:
    """Vector stiffness matrix from the scalar gradient blocks.

    ``M[..., a, b, i, j] = int d_a phi_i d_b phi_j``; the (c, d) block of the
    result is ``mu delta_cd (M00 + M11) + mu M_dc + lam M_cd``.
    """
    M = np.asarray(M)
    lap = M[..., 0, 0, :, :] + M[..., 1, 1, :, :]
    rows = []
    for c in range(2):
        row = []
        for d in range(2):
            blk = mu * M[..., d, c, :, :] + lam * M[..., c, d, :, :]
            if c == d:
                blk = blk + mu * lap
            row.append(blk)
        rows.append(np.concatenate(row, axis=-1))
    A = np.concatenate(rows, axis=-2)
    return 0.5 * (A + np.swapaxes(A, -1, -2))


class FESpace:
    """Mesh + degree-p basis + DOF map + per-element geometric data.

    Material parameters are not stored; matrices for any (mu, lam) are built
    from the cached gradient blocks.
    """

    def __init__(self, mesh: Mesh, p: int, quad_degree: int | None = None):
        self.mesh = mesh
        self.p = p
        self.basis = build_basis(p)
        self.quad_degree = 2 * p if quad_degree is None else quad_degree
        self.quad = build_quadrature(self.quad_degree)
        self.dofmap = build_dofmap(mesh, self.basis)
        self.J, self.det = affine_maps(mesh)
        self.Jinv = np.linalg.inv(self.J)
        self.area = 2.0 * self.det
        self.ref_vals, self.ref_grads = tabulate(self.basis, self.quad.points)

    @property
    def nloc(self) -> int:
        return self.basis.n

    @cached_property
    def phys_grads(self) -> np.ndarray:
        """(nt, nq, nloc, 2) physical gradients J^{-T} grad_hat."""
        return np.einsum("kba,qib->kqia", self.Jinv, self.ref_grads)

    @cached_property
    def grad_blocks(self) -> np.ndarray:
        """(nt, 2, 2, nloc, nloc) blocks int_K d_a phi_i d_b phi_j (unsigned local basis)."""
        w = self.quad.weights[None, :] * self.det[:, None]
        G = self.phys_grads
        return np.einsum("kq,kqia,kqjb->kabij", w, G, G, optimize=True)

    @cached_property
    def ref_grad_blocks(self) -> np.ndarray:
        G = self.ref_grads
        return np.einsum("q,qia,qjb->abij", self.quad.weights, G, G, optimize=True)

    def element_signs(self) -> np.ndarray:
        return np.tile(self.dofmap.sign, (1, 2))

    @cached_property
    def local_boundary(self) -> np.ndarray:
        b = self.basis.boundary_ids
        return np.concatenate([b, b + self.nloc])

    @cached_property
    def local_interior(self) -> np.ndarray:
        i = self.basis.interior_ids
        return np.concatenate([i, i + self.nloc])

    def element_matrices(self, mu: float, lam: float, signed: bool = True) -> np.ndarray:
        """(nt, 2 nloc, 2 nloc) element matrices of a_{lam,K}."""
        A = stiffness_from_blocks(self.grad_blocks, mu, lam)
        if signed:
            s = self.element_signs()
            A = A * s[:, :, None] * s[:, None, :]
        return A

    def reference_matrix(self, mu: float, lam: float) -> np.ndarray:
        """Stiffness on the reference triangle itself (identity map)."""
        return stiffness_from_blocks(self.ref_grad_blocks, mu, lam)

    def element_b_matrices(self, mu: float, lam: float, signed: bool = True) -> np.ndarray:
        """(nt, 2 nloc, 2 nloc) matrices of b_{lam,K} = |K| G^{-T} Bhat G^{-1}.

        ``G^{-1} = DF^{-1} kron I`` maps physical coefficients to the
        coefficients of the Piola-transformed function on the reference triangle.
        """
        Bhat = self.reference_matrix(mu, lam)
        n = self.nloc
        out = np.empty((self.mesh.n_triangles, 2 * n, 2 * n))
        eye = np.eye(n)
        for K in range(self.mesh.n_triangles):
            Ginv = np.kron(self.Jinv[K], eye)
            out[K] = self.det[K] * Ginv.T @ Bhat @ Ginv
        out = 0.5 * (out + np.swapaxes(out, 1, 2))
        if signed:
            s = self.element_signs()
            out = out * s[:, :, None] * s[:, None, :]
        return out

    def element_div_values(self, signed: bool = True) -> np.ndarray:
        """(nt, nq, 2 nloc) divergence of each local vector basis function at quadrature points."""
        G = self.phys_grads
        D = np.concatenate([G[..., 0], G[..., 1]], axis=-1)
        if signed:
            D = D * self.element_signs()[:, None, :]
        return D

    def element_values(self, signed: bool = True) -> np.ndarray:
        v = np.broadcast_to(self.ref_vals, (self.mesh.n_triangles,) + self.ref_vals.shape)
        if signed:
            v = v * self.dofmap.sign[:, None, :]
        return v

    def quad_points_physical(self) -> np.ndarray:
        """(nt, nq, 2)"""
        v0 = self.mesh.vertices[self.mesh.triangles[:, 0]]
        return v0[:, None, :] + np.einsum("kab,qb->kqa", self.J, self.quad.points + 1.0)

    def element_dof_table(self) -> np.ndarray:
        """(nt, 2 nloc) full vector indices."""
        g = self.dofmap.l2g
        return np.concatenate([g, g + self.dofmap.n_scalar], axis=1)

    def element_free_table(self) -> np.ndarray:
        return self.dofmap.full_to_free[self.element_dof_table()]


def element_stiffness_a(space: FESpace, K: int, mu: float, lam: float) -> np.ndarray:
    """a_{lam,K} in the element's own (unsigned) local basis."""
    if mu <= 0 or lam < 0:
        raise AssemblyError("require mu > 0 and lam >= 0")
    return stiffness_from_blocks(space.grad_blocks[K], mu, lam)


def element_stiffness_b(space: FESpace, K: int, mu: float, lam: float) -> np.ndarray:
    """b_{lam,K} in the element's own (unsigned) local basis."""
    if mu <= 0 or lam < 0:
        raise AssemblyError("require mu > 0 and lam >= 0")
    Ginv = np.kron(space.Jinv[K], np.eye(space.nloc))
    B = space.area[K] * Ginv.T @ space.reference_matrix(mu, lam) @ Ginv
    return 0.5 * (B + B.T)


class ReferenceInteriorSolver:
    """Inexact interior solve ``|K|^{-1} G Bhat_II^{-1} G^T`` with G = DF kron I.

    ``Bhat_II`` is factored once and shared by every element.
    """

    def __init__(self, space: FESpace, mu: float, lam: float):
        Bhat = space.reference_matrix(mu, lam)
        ii = space.local_interior
        self.n = len(space.basis.interior_ids)
        self.factor = sla.cho_factor(Bhat[np.ix_(ii, ii)]) if self.n else None
        self.J = space.J
        self.det = space.det

    def solve(self, K: int, r: np.ndarray) -> np.ndarray:
        """Apply to interior residual(s) of element K, ordered component-major."""
        if self.n == 0:
            return np.zeros_like(r)
        n = self.n
        r = np.asarray(r, dtype=float)
        J = self.J[K]
        shape = r.shape
        R = r.reshape(2, n, -1)
        GT = np.einsum("ba,bnk->ank", J, R).reshape(2 * n, -1)   # (DF^T kron I) r
        y = sla.cho_solve(self.factor, GT).reshape(2, n, -1)
        out = np.einsum("ab,bnk->ank", J, y) / self.det[K]      # (DF kron I) y
        return out.reshape(shape)


# ---------------------------------------------------------------------------
# global assembly

def _sym_csr(rows, cols, vals, n) -> sp.csr_matrix:
    keep = rows <= cols
    U = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n)).tocsr()
    U.sum_duplicates()
    A = (U + sp.triu(U, k=1, format="csr").T).tocsr()
    A.sort_indices()
    return A


def assemble_full(space: FESpace, element_mats: np.ndarray) -> sp.csr_matrix:
    """Assemble signed element matrices over all (unconstrained) vector DOFs."""
    dofs = space.element_dof_table()
    rows = np.repeat(dofs[:, :, None], dofs.shape[1], axis=2).ravel()
    cols = np.repeat(dofs[:, None, :], dofs.shape[1], axis=1).ravel()
    return _sym_csr(rows, cols, element_mats.ravel(), space.dofmap.n_full)


def restrict_free(space: FESpace, A_full) -> sp.csr_matrix:
    f = space.dofmap.free
    A = A_full[f][:, f].tocsr()
    A.sort_indices()
    return A


def assemble_global(space: FESpace, mu: float, lam: float, constrained: bool = True):
    """Stiffness matrix on X_D (Dirichlet DOFs eliminated) or on all DOFs."""
    if mu <= 0 or lam < 0:
        raise AssemblyError("require mu > 0 and lam >= 0")
    A = assemble_full(space, space.element_matrices(mu, lam))
    if not constrained:
        return A
    if not space.mesh.edges_with_tag("dirichlet"):
        raise AssemblyError("no Dirichlet boundary: stiffness matrix is singular "
                            "(pure traction problems are not supported)")
    return restrict_free(space, A)


def strain_gram(space: FESpace, constrained: bool = True):
    """Matrix of ||eps(v)||^2, i.e. a with mu = 1/2, lam = 0."""
    A = assemble_full(space, space.element_matrices(0.5, 0.0))
    return restrict_free(space, A) if constrained else A


def export_coordinate(A, path) -> None:
    A = sp.coo_matrix(A)
    with open(path, "w") as fh:
        for i, j, v in zip(A.row, A.col, A.data):
            fh.write(f"{i} {j} {v:.17g}\n")


# ---------------------------------------------------------------------------
# load vectors

def _edge_points(k: int, s: np.ndarray) -> np.ndarray:
    a = REFERENCE_VERTICES[(k + 1) % 3]
    b = REFERENCE_VERTICES[(k + 2) % 3]
    return a + 0.5 * (s[:, None] + 1.0) * (b - a)


def traction_load(space: FESpace, traction, edges=None) -> np.ndarray:
    """Full vector of int_gamma t . v ds over the given boundary edges.

    ``traction`` is a constant 2-vector or a callable ``f(x) -> (n, 2)``.
    Defaults to all Neumann-tagged edges.
    """
    mesh, basis = space.mesh, space.basis
    if edges is None:
        edges = mesh.edges_with_tag("neumann")
    s, w = gauss_line(2 * space.p)
    out = np.zeros(space.dofmap.n_full)
    for e in edges:
        K = int(mesh.edge_elements[e][0])
        k = int(np.flatnonzero(mesh.tri_edges[K] == e)[0])
        ids = basis.trace_ids(k)
        vals, _ = tabulate(basis, _edge_points(k, s))
        vals = vals[:, ids] * space.dofmap.sign[K, ids]
        tri = mesh.triangles[K]
        a, b = mesh.vertices[tri[(k + 1) % 3]], mesh.vertices[tri[(k + 2) % 3]]
        x = a + 0.5 * (s[:, None] + 1.0) * (b - a)
        t = traction(x) if callable(traction) else np.broadcast_to(np.asarray(traction, float), x.shape)
        jac = 0.5 * np.linalg.norm(b - a)
        g = space.dofmap.l2g[K, ids]
        for c in range(2):
            out[c * space.dofmap.n_scalar + g] += jac * (w * t[:, c]) @ vals
    return out


def body_load(space: FESpace, force) -> np.ndarray:
    """Full vector of int f . v dx for a constant or callable body force."""
    X = space.quad_points_physical()
    if callable(force):
        F = np.asarray(force(X.reshape(-1, 2))).reshape(X.shape)
    else:
        F = np.broadcast_to(np.asarray(force, float), X.shape)
    V = space.element_values()
    w = space.quad.weights[None, :] * space.det[:, None]
    out = np.zeros(space.dofmap.n_full)
    l2g = space.dofmap.l2g
    for c in range(2):
        loc = np.einsum("kq,kq,kqi->ki", w, F[..., c], V)
        np.add.at(out, c * space.dofmap.n_scalar + l2g, loc)
    return out


def interpolate_linear(space: FESpace, field) -> np.ndarray:
    """Full coefficient vector of an affine vector field (vertex DOFs only)."""
    vals = np.asarray(field(space.mesh.vertices), dtype=float)
    out = np.zeros(space.dofmap.n_full)
    nv = space.mesh.n_vertices
    out[:nv] = vals[:, 0]
    out[space.dofmap.n_scalar: space.dofmap.n_scalar + nv] = vals[:, 1]
    return out


def trace_interpolate(space: FESpace, data, edges, tol: float = 1e-10) -> np.ndarray:
    """Full vector whose trace on ``edges`` equals ``data`` (a callable x -> (n, 2)).

    Vertex values are taken pointwise; edge coefficients by least squares on
    the edge. Raises if the data is not a degree-p polynomial on some edge.
    """
    mesh, basis, dm = space.mesh, space.basis, space.dofmap
    out = np.zeros(dm.n_full)
    s = np.cos(np.pi * (np.arange(3 * space.p + 3) + 0.5) / (3 * space.p + 3))
    for e in edges:
        K = int(mesh.edge_elements[e][0])
        k = int(np.flatnonzero(mesh.tri_edges[K] == e)[0])
        tri = mesh.triangles[K]
        ia, ib = tri[(k + 1) % 3], tri[(k + 2) % 3]
        a, b = mesh.vertices[ia], mesh.vertices[ib]
        x = a + 0.5 * (s[:, None] + 1.0) * (b - a)
        g = np.asarray(data(x), dtype=float)
        ga = np.asarray(data(a[None]), dtype=float)[0]
        gb = np.asarray(data(b[None]), dtype=float)[0]
        vals, _ = tabulate(basis, _edge_points(k, s))
        ids = basis.edge_ids(k)
        Phi = vals[:, ids] * dm.sign[K, ids]
        lin = np.outer(vals[:, (k + 1) % 3], ga) + np.outer(vals[:, (k + 2) % 3], gb)
        coef, *_ = np.linalg.lstsq(Phi, g - lin, rcond=None) if len(ids) else (np.zeros((0, 2)),)
        resid = np.abs(Phi @ coef + lin - g).max() if len(ids) else np.abs(lin - g).max()
        if resid > tol * max(1.0, np.abs(g).max()):
            raise AssemblyError(f"Dirichlet data not representable in degree-{space.p} "
                                f"trace space on edge {tuple(mesh.edges[e])} (residual {resid:.2e})")
        gl = dm.l2g[K, ids]
        for c in range(2):
            out[c * dm.n_scalar + tri[(k + 1) % 3]] = ga[c]
            out[c * dm.n_scalar + tri[(k + 2) % 3]] = gb[c]
            out[c * dm.n_scalar + gl] = coef[:, c]
    return out


def random_load(n: int, seed: int) -> np.ndarray:
    """Entries uniform in (-1, 1), reproducible from ``seed``."""
    return np.random.default_rng(seed).uniform(-1.0, 1.0, n)


@dataclass
class LinearSystem:
    """Constrained system A u = L on X_D plus the Dirichlet lifting."""

    space: FESpace
    mu: float
    lam: float
    A: sp.csr_matrix
    rhs: np.ndarray
    lifting: np.ndarray = field(repr=False)  # full vector, nonzero only on Dirichlet DOFs

    def full_solution(self, u_free: np.ndarray) -> np.ndarray:
        u = self.lifting.copy()
        u[self.space.dofmap.free] += u_free
        return u


def cook_traction(x):
    return np.tile([1.0, 0.0], (len(x), 1))


def moffatt_lid(x):
    x = np.atleast_2d(x)
    out = np.zeros_like(x)
    lid = np.abs(x[:, 1]) < 1e-12
    out[lid, 0] = 1.0 - x[lid, 0] ** 2
    return out


def assemble_load(space: FESpace, mu: float, lam: float, problem: str = "square",
                  traction=None, body_force=None, dirichlet=None,
                  seed: int | None = None) -> LinearSystem:
    """Build the constrained system for a named test problem.

    cook: traction (1, 0) on the Neumann edges (right face); moffatt:
    Dirichlet data (1 - x^2, 0) on the lid lifted into the right-hand side;
    square: zero data unless overridden. ``seed`` replaces the right-hand
    side by a random vector with entries in (-1, 1).
    """
    dm = space.dofmap
    if problem == "cook" and traction is None:
        traction = cook_traction
    if problem == "moffatt" and dirichlet is None:
        dirichlet = moffatt_lid
    A_full = assemble_global(space, mu, lam, constrained=False)
    L = np.zeros(dm.n_full)
    if traction is not None:
        L += traction_load(space, traction)
    if body_force is not None:
        L += body_load(space, body_force)
    lift = np.zeros(dm.n_full)
    if dirichlet is not None:
        lift = trace_interpolate(space, dirichlet, space.mesh.edges_with_tag("dirichlet"))
        lift[dm.free] = 0.0
    A = restrict_free(space, A_full)
    rhs = L[dm.free] - (A_full @ lift)[dm.free]
    if seed is not None:
        rhs = random_load(dm.n_total, seed)
    return LinearSystem(space=space, mu=mu, lam=lam, A=A, rhs=rhs, lifting=lift)
