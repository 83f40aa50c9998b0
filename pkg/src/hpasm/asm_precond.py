"""Additive Schwarz preconditioner: interior solves, coarse solve, vertex patches.

Action on a residual ``r``::

    P^{-1} r = sum_K R_K^T M_K^{-1} R_K r  +  E P_BB^{-1} E^T r
    P_BB^{-1} = R_C^T A_C^{-1} R_C + sum_a R_a^T A_a^{-1} R_a

``E`` is the global extension of the chosen boundary space and
``A_BB = E^T A E``. The coarse set holds the vertex DOFs and the edge DOFs of
edge degree <= 4; the patch of vertex ``a`` holds the vertex DOFs at ``a``
and every edge DOF on an edge incident to ``a``. Dirichlet-masked DOFs are
never part of any block; a patch left empty by the masking is dropped.

In ``boundary`` mode only the ``P_BB^{-1}`` part is built and the operator is
``A_BB`` itself.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from .assembly import FESpace, ReferenceInteriorSolver
from .extension import ExtensionOperator, static_condense
from .febasis import EDGE, VERTEX

log = logging.getLogger(__name__)

MODES = ("full", "boundary")
INTERIOR_SOLVERS = ("exact", "inexact")


class PreconditionerError(ValueError):
    pass


@dataclass
class SubspaceSolver:
    """Exact solve on the span of the basis functions listed in ``restriction``."""

    name: str
    restriction: np.ndarray
    factor: tuple = field(repr=False)

    @classmethod
    def from_operator(cls, name: str, op, idx) -> "SubspaceSolver":
        idx = np.asarray(idx, dtype=np.int64)
        if sp.issparse(op):
            block = op[idx][:, idx].toarray()
        else:
            block = np.asarray(op)[np.ix_(idx, idx)]
        block = 0.5 * (block + block.T)
        try:
            fac = sla.cho_factor(block)
        except np.linalg.LinAlgError:
            raise PreconditionerError(f"subspace block {name!r} is not positive definite") from None
        return cls(name, idx, fac)

    @property
    def size(self) -> int:
        return len(self.restriction)

    def apply_add(self, r: np.ndarray, out: np.ndarray) -> None:
        out[self.restriction] += sla.cho_solve(self.factor, r[self.restriction])


def coarse_indices(space: FESpace) -> np.ndarray:
    """Positions (within the boundary DOF list) of the coarse DOFs."""
    return np.flatnonzero(space.dofmap.coarse_mask)


def patch_indices(space: FESpace, a: int) -> np.ndarray:
    """Positions (within the boundary DOF list) of the patch DOFs of vertex ``a``."""
    dm = space.dofmap
    kind, ent = dm.kind[dm.boundary], dm.entity[dm.boundary]
    edges = np.asarray(space.mesh.vertex_edges(a), dtype=np.int64)
    sel = ((kind == VERTEX) & (ent == a)) | ((kind == EDGE) & np.isin(ent, edges))
    return np.flatnonzero(sel)


def vertex_patches(space: FESpace) -> list[tuple[int, np.ndarray]]:
    out = []
    for a in range(space.mesh.n_vertices):
        idx = patch_indices(space, a)
        if len(idx):
            out.append((a, idx))
    return out


class ASMPreconditioner:
    """SPD additive Schwarz preconditioner; see the module docstring."""

    def __init__(self, space: FESpace, A_BB, extension: ExtensionOperator | None,
                 mode: str = "boundary", interior=None, use_coarse: bool = True,
                 use_patches: bool = True):
        if mode not in MODES:
            raise PreconditionerError(f"unknown mode {mode!r}; choose from {MODES}")
        self.space = space
        self.mode = mode
        self.extension = extension
        self.n_boundary = space.dofmap.n_boundary
        self.n = self.n_boundary if mode == "boundary" else space.dofmap.n_total
        self.interior = interior
        if mode == "full" and extension is None:
            raise PreconditionerError("full mode needs the boundary extension")

        self.coarse: SubspaceSolver | None = None
        self.patches: list[SubspaceSolver] = []
        if use_coarse:
            idx = coarse_indices(space)
            if len(idx) == 0:
                log.warning("coarse space is empty; coarse solve skipped")
            else:
                self.coarse = SubspaceSolver.from_operator("coarse", A_BB, idx)
        if use_patches:
            for a, idx in vertex_patches(space):
                self.patches.append(SubspaceSolver.from_operator(f"vertex{a}", A_BB, idx))

    # -- application -----------------------------------------------------
    def apply_boundary(self, r: np.ndarray) -> np.ndarray:
        out = np.zeros(r.shape)
        if self.coarse is not None:
            self.coarse.apply_add(r, out)
        for s in self.patches:
            s.apply_add(r, out)
        return out

    def apply(self, r) -> np.ndarray:
        """P^{-1} r for a vector or a column block ``r``."""
        r = np.asarray(r, dtype=float)
        if r.shape[0] != self.n:
            raise PreconditionerError(f"residual has length {r.shape[0]}, expected {self.n}")
        if self.mode == "boundary":
            return self.apply_boundary(r)
        E = self.extension.global_matrix
        out = E @ self.apply_boundary(E.T @ r)
        if self.interior is not None:
            out = out + self.interior(r)
        return out

    __call__ = apply

    def as_linear_operator(self) -> LinearOperator:
        return LinearOperator((self.n, self.n), matvec=self.apply, matmat=self.apply,
                              dtype=float)

    @property
    def subspace_sizes(self) -> dict:
        sizes = {s.name: s.size for s in self.patches}
        if self.coarse is not None:
            sizes["coarse"] = self.coarse.size
        return sizes


class InteriorSolver:
    """Block-diagonal solve over the interior DOFs of every element."""

    def __init__(self, space: FESpace, mu: float, lam: float, kind: str = "exact"):
        if kind not in INTERIOR_SOLVERS:
            raise PreconditionerError(f"unknown interior solver {kind!r}")
        self.kind = kind
        li = space.local_interior
        self.dofs = space.element_free_table()[:, li]
        self.factors = []
        self.reference = None
        if len(li) == 0:
            return
        if kind == "inexact":
            self.reference = ReferenceInteriorSolver(space, mu, lam)
        else:
            Aloc = space.element_matrices(mu, lam)
            self.factors = [sla.cho_factor(Aloc[K][np.ix_(li, li)]) for K in range(len(Aloc))]

    def __call__(self, r: np.ndarray) -> np.ndarray:
        out = np.zeros(r.shape)
        if self.dofs.shape[1] == 0:
            return out
        for K, idx in enumerate(self.dofs):
            if self.reference is not None:
                out[idx] += self.reference.solve(K, r[idx])
            else:
                out[idx] += sla.cho_solve(self.factors[K], r[idx])
        return out


def build_preconditioner(A, space: FESpace, extension: ExtensionOperator, mode: str = "boundary",
                         interior_solver: str | None = None, A_BB=None,
                         use_coarse: bool = True, use_patches: bool = True):
    """Build the preconditioner and return ``(P, operator)``.

    ``A`` is the constrained global matrix. The returned operator is ``A`` in
    full mode and ``A_BB = E^T A E`` in boundary mode. The interior solver
    defaults to the reference-element (inexact) one for the inexact flavor.
    """
    if A_BB is None:
        A_BB = static_condense(A, extension).A_BB
    interior = None
    if mode == "full":
        kind = interior_solver or ("inexact" if extension.flavor == "inexact" else "exact")
        interior = InteriorSolver(space, extension.mu, extension.lam, kind)
    P = ASMPreconditioner(space, A_BB, extension, mode, interior, use_coarse, use_patches)
    return P, (A if mode == "full" else A_BB)
