"""Boundary spaces defined by element-wise extension of traces.

Three flavors, each an element-local map from boundary coefficients to
interior coefficients:

* ``elastic``  - minimum a_lam energy (static condensation)
* ``stokes``   - discrete Stokes extension with multiplier in div X_I(K)
* ``inexact``  - minimum b_lam energy, b being the reference-element form

All element data here are in the signed (globally oriented) local basis.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .assembly import FESpace, stiffness_from_blocks, strain_gram
from .febasis import build_basis, build_quadrature, tabulate

FLAVORS = ("elastic", "stokes", "inexact")
RANK_TOL = 1e-10
DENSE_LIMIT = 4000


class ExtensionError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# div X_I on the reference triangle

@dataclass(frozen=True)
class InteriorDivBasis:
    """L2(T^)-orthonormal basis of div X_I(T^), as values at quadrature points."""

    p: int
    values: np.ndarray        # (nq, r)
    singular_values: np.ndarray
    coefficient_map: np.ndarray  # (r, 2 ni): interior coefficients -> div coefficients

    @property
    def rank(self) -> int:
        return self.values.shape[1]


@lru_cache(maxsize=None)
def interior_div_basis(p: int, quad_degree: int | None = None) -> InteriorDivBasis:
    """Rank-revealing SVD of the divergence of the interior vector functions."""
    basis = build_basis(p)
    quad = build_quadrature(2 * p if quad_degree is None else quad_degree)
    _, G = tabulate(basis, quad.points)
    ii = basis.interior_ids
    D = np.concatenate([G[:, ii, 0], G[:, ii, 1]], axis=1)  # (nq, 2 ni)
    if D.shape[1] == 0:
        return InteriorDivBasis(p, np.zeros((len(quad.weights), 0)), np.zeros(0),
                                np.zeros((0, 0)))
    sw = np.sqrt(quad.weights)
    U, s, _ = np.linalg.svd(sw[:, None] * D, full_matrices=False)
    r = int((s > RANK_TOL * s[0]).sum())
    R = U[:, :r] / sw[:, None]
    C = R.T @ (quad.weights[:, None] * D)
    return InteriorDivBasis(p, R, s, C)


def element_div_matrices(space: FESpace, divbasis: InteriorDivBasis | None = None) -> np.ndarray:
    """(nt, r, 2 nloc): D[K] @ v = coefficients of Pi_I div v on K in an L2(K)-orthonormal basis."""
    if divbasis is None:
        divbasis = interior_div_basis(space.p, space.quad_degree)
    w = space.quad.weights
    divs = space.element_div_values()                     # (nt, nq, 2 nloc)
    scale = np.sqrt(space.det)[:, None, None]
    return scale * np.einsum("qr,q,kqj->krj", divbasis.values, w, divs)


def element_div_basis_values(space: FESpace, divbasis: InteriorDivBasis) -> np.ndarray:
    """(nt, nq, r) values of the L2(K)-orthonormal basis at quadrature points."""
    return divbasis.values[None, :, :] / np.sqrt(space.det)[:, None, None]


# ---------------------------------------------------------------------------
# extension operators

@dataclass
class ExtensionOperator:
    flavor: str
    space: FESpace = field(repr=False)
    mu: float
    lam: float
    interior_maps: np.ndarray = field(repr=False)    # (nt, 2 ni, 2 nb)
    multipliers: np.ndarray | None = field(default=None, repr=False)  # stokes: (nt, r, 2 nb)
    _E: sp.csr_matrix | None = field(default=None, repr=False)

    def element_matrix(self, K: int) -> np.ndarray:
        """E_K: boundary coefficients -> all local coefficients (local ordering)."""
        sp_ = self.space
        nb = len(sp_.local_boundary)
        E = np.zeros((2 * sp_.nloc, nb))
        E[sp_.local_boundary, np.arange(nb)] = 1.0
        E[sp_.local_interior] = self.interior_maps[K]
        return E

    @property
    def global_matrix(self) -> sp.csr_matrix:
        """E: boundary-space coefficients (dofmap.boundary order) -> X_D coefficients."""
        if self._E is None:
            self._E = _global_extension(self.space, self.interior_maps)
        return self._E

    def extend(self, v: np.ndarray) -> np.ndarray:
        """T_B v: keep the boundary values of ``v`` (free numbering), re-extend interiors."""
        return self.global_matrix @ v[self.space.dofmap.boundary]


def _global_extension(space: FESpace, maps: np.ndarray) -> sp.csr_matrix:
    dm = space.dofmap
    n, nB = dm.n_total, dm.n_boundary
    bpos = -np.ones(n, dtype=np.int64)
    bpos[dm.boundary] = np.arange(nB)
    free = space.element_free_table()
    rows, cols, vals = [dm.boundary], [np.arange(nB)], [np.ones(nB)]
    lb, li = space.local_boundary, space.local_interior
    for K in range(space.mesh.n_triangles):
        bfree = free[K, lb]
        keep = bfree >= 0
        r = free[K, li]
        c = bpos[bfree[keep]]
        X = maps[K][:, keep]
        rows.append(np.repeat(r, len(c)))
        cols.append(np.tile(c, len(r)))
        vals.append(X.ravel())
    E = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, nB)).tocsr()
    E.sort_indices()
    return E


def _harmonic_maps(M: np.ndarray, li, lb) -> np.ndarray:
    out = np.empty((M.shape[0], len(li), len(lb)))
    for K in range(M.shape[0]):
        Mii = M[K][np.ix_(li, li)]
        Mib = M[K][np.ix_(li, lb)]
        try:
            out[K] = -sla.cho_solve(sla.cho_factor(Mii), Mib)
        except np.linalg.LinAlgError:
            raise ExtensionError(f"interior block of element {K} is not positive definite") from None
    return out


def build_extension(space: FESpace, mu: float, lam: float, flavor: str) -> ExtensionOperator:
    if flavor not in FLAVORS:
        raise ValueError(f"unknown extension flavor {flavor!r}; choose from {FLAVORS}")
    li, lb = space.local_interior, space.local_boundary
    nt = space.mesh.n_triangles
    if len(li) == 0:
        return ExtensionOperator(flavor, space, mu, lam, np.zeros((nt, 0, len(lb))),
                                 np.zeros((nt, 0, len(lb))) if flavor == "stokes" else None)
    if flavor == "elastic":
        return ExtensionOperator(flavor, space, mu, lam,
                                 _harmonic_maps(space.element_matrices(mu, lam), li, lb))
    if flavor == "inexact":
        return ExtensionOperator(flavor, space, mu, lam,
                                 _harmonic_maps(space.element_b_matrices(mu, lam), li, lb))

    A0 = stiffness_from_blocks(space.grad_blocks, mu, 0.0)
    s = space.element_signs()
    A0 = A0 * s[:, :, None] * s[:, None, :]
    D = element_div_matrices(space)
    r = D.shape[1]
    ni, nb = len(li), len(lb)
    maps = np.empty((nt, ni, nb))
    mult = np.empty((nt, r, nb))
    for K in range(nt):
        Aii = A0[K][np.ix_(li, li)]
        Aib = A0[K][np.ix_(li, lb)]
        Di, Db = D[K][:, li], D[K][:, lb]
        kkt = np.block([[Aii, -Di.T], [-Di, np.zeros((r, r))]])
        rhs = np.vstack([-Aib, Db])
        try:
            sol = sla.solve(kkt, rhs, assume_a="sym")
        except np.linalg.LinAlgError as exc:
            raise ExtensionError(f"Stokes extension saddle point singular on element {K}") from exc
        maps[K], mult[K] = sol[:ni], sol[ni:]
    return ExtensionOperator(flavor, space, mu, lam, maps, mult)


# ---------------------------------------------------------------------------
# static condensation

@dataclass
class Condensed:
    """Boundary operator E^T A E plus the element interior factorizations."""

    extension: ExtensionOperator
    A: sp.csr_matrix = field(repr=False)
    A_BB: sp.csr_matrix = field(repr=False)
    interior_factors: list = field(repr=False)
    interior_dofs: list = field(repr=False)

    def interior_solve(self, r: np.ndarray) -> np.ndarray:
        """Block-diagonal A_II^{-1} applied to a free-numbering vector (zero outside interiors)."""
        out = np.zeros_like(r, dtype=float)
        for fac, idx in zip(self.interior_factors, self.interior_dofs):
            out[idx] = sla.cho_solve(fac, r[idx])
        return out

    def boundary_rhs(self, L: np.ndarray) -> np.ndarray:
        return self.extension.global_matrix.T @ L

    def recover(self, u_B: np.ndarray, L: np.ndarray) -> np.ndarray:
        """u = E u_B + A_II^{-1} (L - A E u_B)|_I; for the elastic flavor the coupling term vanishes."""
        Eu = self.extension.global_matrix @ u_B
        return Eu + self.interior_solve(L - self.A @ Eu)


def static_condense(A: sp.csr_matrix, extension: ExtensionOperator) -> Condensed:
    space = extension.space
    E = extension.global_matrix
    ABB = (E.T @ (A @ E)).tocsr()
    ABB = (0.5 * (ABB + ABB.T)).tocsr()
    ABB.sort_indices()
    free = space.element_free_table()
    Aloc = space.element_matrices(extension.mu, extension.lam)
    li = space.local_interior
    factors, dofs = [], []
    for K in range(space.mesh.n_triangles):
        if len(li) == 0:
            break
        factors.append(sla.cho_factor(Aloc[K][np.ix_(li, li)]))
        dofs.append(free[K, li])
    return Condensed(extension, A, ABB, factors, dofs)


def schur_complement(A: sp.csr_matrix, space: FESpace) -> np.ndarray:
    """Dense A_bb - A_bi A_ii^{-1} A_ib (algebraic route, for cross-checks)."""
    dm = space.dofmap
    Ad = A.toarray()
    I, B = dm.interior, dm.boundary
    if len(I) == 0:
        return Ad[np.ix_(B, B)]
    S = Ad[np.ix_(B, B)] - Ad[np.ix_(B, I)] @ np.linalg.solve(Ad[np.ix_(I, I)], Ad[np.ix_(I, B)])
    return 0.5 * (S + S.T)


# ---------------------------------------------------------------------------
# divergence bookkeeping and tau_B

def div_projection_gram(space: FESpace) -> sp.csr_matrix:
    """Matrix of ||Pi_I div v||^2 on X_D."""
    D = element_div_matrices(space)
    G = np.einsum("krj,kri->kji", D, D)
    free = space.element_free_table()
    rows = np.repeat(free[:, :, None], free.shape[1], axis=2).ravel()
    cols = np.repeat(free[:, None, :], free.shape[1], axis=1).ravel()
    keep = (rows >= 0) & (cols >= 0)
    n = space.dofmap.n_total
    M = sp.coo_matrix((G.ravel()[keep], (rows[keep], cols[keep])), shape=(n, n)).tocsr()
    return (0.5 * (M + M.T)).tocsr()


def element_div_coefficients(space: FESpace, v_free: np.ndarray) -> np.ndarray:
    """(nt, r) coefficients of Pi_I div v per element."""
    D = element_div_matrices(space)
    vloc = _localize(space, v_free)
    return np.einsum("krj,kj->kr", D, vloc)


def divergence_at_quadrature(space: FESpace, v_free: np.ndarray) -> np.ndarray:
    """(nt, nq) div v at the element quadrature points."""
    return np.einsum("kqj,kj->kq", space.element_div_values(), _localize(space, v_free))


def _localize(space: FESpace, v_free: np.ndarray) -> np.ndarray:
    full = np.zeros(space.dofmap.n_full)
    full[space.dofmap.free] = v_free
    return full[space.element_dof_table()]


def project_interior_div(space: FESpace, f: np.ndarray) -> np.ndarray:
    """Pi_I applied to a field given by its values (nt, nq) at quadrature points."""
    R = element_div_basis_values(space, interior_div_basis(space.p, space.quad_degree))
    w = space.quad.weights[None, :] * space.det[:, None]
    coef = np.einsum("kqr,kq,kq->kr", R, w, f)
    return np.einsum("kqr,kr->kq", R, coef)


@dataclass(frozen=True)
class TauEstimate:
    tau: float
    ratio_max: float          # tau ** 2
    pi_term_max: float        # max over eigvecs of ||Pi_I div T_B v||^2 / ||eps(v)||^2 (unscaled)


def tau_B_estimate(space: FESpace, extension: ExtensionOperator, limit: int = DENSE_LIMIT) -> TauEstimate:
    """Dense estimate of the smallest tau_B with

    ||eps(T_B v)||^2 + (lam/mu) ||Pi_I div T_B v||^2 <= tau_B^2 ||eps(v)||^2  on X_D.
    """
    n = space.dofmap.n_total
    if n > limit:
        raise ExtensionError(f"tau_B dense path limited to {limit} DOFs (got {n})")
    T = extension.global_matrix.toarray()
    B = space.dofmap.boundary
    TB = np.zeros((n, n))
    TB[:, B] = T
    Eps = strain_gram(space).toarray()
    Pi = div_projection_gram(space).toarray()
    ETE = TB.T @ Eps @ TB
    PTP = TB.T @ Pi @ TB
    ratio = extension.lam / extension.mu
    N = ETE + ratio * PTP
    # deflate zero-strain directions (rigid motions when there is no Dirichlet part)
    w, V = np.linalg.eigh(Eps)
    keep = w > RANK_TOL * w.max()
    Q = V[:, keep] / np.sqrt(w[keep])
    M = Q.T @ N @ Q
    theta = np.linalg.eigvalsh(0.5 * (M + M.T))
    P = Q.T @ PTP @ Q
    pi_max = float(np.abs(np.linalg.eigvalsh(0.5 * (P + P.T))).max()) if P.size else 0.0
    tmax = float(theta.max()) if theta.size else 0.0
    return TauEstimate(tau=float(np.sqrt(max(tmax, 0.0))), ratio_max=tmax, pi_term_max=pi_max)
