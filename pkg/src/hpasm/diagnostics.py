"""Inf-sup constant, von Mises stress sampling and residual ensembles."""
from __future__ import annotations

import csv
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .assembly import FESpace, assemble_full, restrict_free
from .extension import RANK_TOL
from .febasis import tabulate
from .krylov import DEFAULT_MAX_ITER, DEFAULT_TOL, CGResult, pcg

DENSE_LIMIT = 4000


class DiagnosticsError(ValueError):
    pass


# ---------------------------------------------------------------------------
# inf-sup constant

def _vector_mass(space: FESpace) -> np.ndarray:
    V = space.element_values()                              # (nt, nq, nloc)
    w = space.quad.weights[None, :] * space.det[:, None]
    M = np.einsum("kq,kqi,kqj->kij", w, V, V)
    nt, n = M.shape[0], M.shape[1]
    out = np.zeros((nt, 2 * n, 2 * n))
    out[:, :n, :n] = M
    out[:, n:, n:] = M
    return out


def h1_gram(space: FESpace):
    """Matrix of ||v||_1^2 = ||v||^2 + ||grad v||^2 on X_D."""
    G = space.grad_blocks
    lap = G[:, 0, 0] + G[:, 1, 1]
    n = lap.shape[1]
    s = space.element_signs()
    K = np.zeros((len(lap), 2 * n, 2 * n))
    K[:, :n, :n] = lap
    K[:, n:, n:] = lap
    K = K * s[:, :, None] * s[:, None, :]
    return restrict_free(space, assemble_full(space, K + _vector_mass(space)))


def div_gram(space: FESpace):
    """Matrix of ||div v||^2 on X_D."""
    D = space.element_div_values()
    w = space.quad.weights[None, :] * space.det[:, None]
    G = np.einsum("kq,kqi,kqj->kij", w, D, D)
    return restrict_free(space, assemble_full(space, G))


def inf_sup_beta(space: FESpace, limit: int = DENSE_LIMIT) -> float:
    """inf over q in div X_D of sup over v in X_D of (q, div v) / (||q|| ||v||_1).

    Because q ranges over div X_D itself, beta^2 is the smallest nonzero
    eigenvalue of the pencil  (div u, div v) = beta^2 (u, v)_1  on X_D.
    "Nonzero" means above RANK_TOL times the largest eigenvalue.
    """
    n = space.dofmap.n_total
    if n > limit:
        raise DiagnosticsError(f"dense inf-sup computation limited to {limit} DOFs (got {n})")
    D = div_gram(space).toarray()
    M1 = h1_gram(space).toarray()
    theta = sla.eigh(0.5 * (D + D.T), 0.5 * (M1 + M1.T), eigvals_only=True)
    if theta.size == 0 or theta[-1] <= 0:
        raise DiagnosticsError("div X_D is empty")
    nonzero = theta[theta > RANK_TOL * theta[-1]]
    return float(np.sqrt(nonzero[0]))


# ---------------------------------------------------------------------------
# stress

@dataclass(frozen=True)
class StressSample:
    x: float
    y: float
    s11: float
    s22: float
    s12: float
    vm: float


def von_mises(s11, s22, s12):
    """sigma_v from the stress components; round-off negatives clamped to 0."""
    v2 = s11 ** 2 + s22 ** 2 + 3.0 * s12 ** 2 - s11 * s22
    return np.sqrt(np.maximum(v2, 0.0))


def stress_from_gradient(grad_u, mu: float, lam: float):
    """grad_u[..., c, b] = d u_c / d x_b  ->  (s11, s22, s12)."""
    div = grad_u[..., 0, 0] + grad_u[..., 1, 1]
    s11 = 2 * mu * grad_u[..., 0, 0] + lam * div
    s22 = 2 * mu * grad_u[..., 1, 1] + lam * div
    s12 = mu * (grad_u[..., 0, 1] + grad_u[..., 1, 0])
    return s11, s22, s12


def reference_lattice(n: int = 10) -> np.ndarray:
    """Barycentric lattice with spacing 1/n, in reference coordinates."""
    if n < 1:
        raise DiagnosticsError("lattice resolution must be >= 1")
    pts = [(-1.0 + 2.0 * i / n, -1.0 + 2.0 * j / n) for j in range(n + 1) for i in range(n + 1 - j)]
    return np.array(pts)


def _element_coefficients(space: FESpace, u_full: np.ndarray) -> np.ndarray:
    """(nt, 2, nloc) signed local coefficients of a full-numbering vector."""
    u = np.asarray(u_full, dtype=float)
    if u.shape != (space.dofmap.n_full,):
        raise DiagnosticsError(f"solution has shape {u.shape}, expected ({space.dofmap.n_full},)")
    loc = u[space.element_dof_table()] * space.element_signs()
    return loc.reshape(len(loc), 2, space.nloc)


def _gradient_at(space: FESpace, U: np.ndarray, K: np.ndarray, ref_pts: np.ndarray) -> np.ndarray:
    """grad u at reference points ``ref_pts[i]`` of elements ``K[i]``."""
    _, G = tabulate(space.basis, ref_pts)                     # (m, nloc, 2)
    phys = np.einsum("mba,mib->mia", space.Jinv[K], G)        # J^{-T} grad_hat
    return np.einsum("mci,mib->mcb", U[K], phys)


def von_mises_field(space: FESpace, u_full, mu: float, lam: float, lattice: int = 10):
    """Stress samples on a per-element barycentric lattice."""
    U = _element_coefficients(space, u_full)
    ref = reference_lattice(lattice)
    nt = space.mesh.n_triangles
    K = np.repeat(np.arange(nt), len(ref))
    pts = np.tile(ref, (nt, 1))
    grad = _gradient_at(space, U, K, pts)
    v0 = space.mesh.vertices[space.mesh.triangles[K, 0]]
    xy = v0 + np.einsum("mab,mb->ma", space.J[K], pts + 1.0)
    return _samples(xy, *stress_from_gradient(grad, mu, lam))


def locate_points(space: FESpace, points, tol: float = 1e-10):
    """(element index, reference coordinates) for each physical point."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    v0 = space.mesh.vertices[space.mesh.triangles[:, 0]]
    # reference coordinates of every point in every element
    ref = np.einsum("kab,kmb->kma", space.Jinv, P[None, :, :] - v0[:, None, :]) - 1.0
    lam = np.stack([-(ref[..., 0] + ref[..., 1]) / 2, (1 + ref[..., 0]) / 2, (1 + ref[..., 1]) / 2])
    inside = lam.min(axis=0) >= -tol                          # (nt, m)
    if not inside.any(axis=0).all():
        bad = P[~inside.any(axis=0)][0]
        raise DiagnosticsError(f"sample point {tuple(bad)} lies outside the mesh")
    K = inside.argmax(axis=0)
    return K, ref[K, np.arange(len(P))]


def stress_at(space: FESpace, u_full, mu: float, lam: float, points):
    """Stress samples at arbitrary physical points."""
    U = _element_coefficients(space, u_full)
    K, ref = locate_points(space, points)
    grad = _gradient_at(space, U, K, ref)
    return _samples(np.atleast_2d(np.asarray(points, dtype=float)), *stress_from_gradient(grad, mu, lam))


def _samples(xy, s11, s22, s12):
    vm = von_mises(s11, s22, s12)
    return [StressSample(float(a), float(b), float(c), float(d), float(e), float(f))
            for (a, b), c, d, e, f in zip(xy, s11, s22, s12, vm)]


# ---------------------------------------------------------------------------
# ensembles

@dataclass
class EnsembleResult:
    results: list

    @property
    def iterations(self) -> np.ndarray:
        return np.array([r.iterations for r in self.results])

    @property
    def summary(self) -> dict:
        it = self.iterations
        return {"runs": len(it), "min": int(it.min()), "median": float(np.median(it)),
                "max": int(it.max()), "all_converged": all(r.converged for r in self.results)}


def ensemble_rhs(n: int, count: int, seed: int) -> list[np.ndarray]:
    """One independent uniform(-1, 1) vector per run; run i depends only on (seed, i)."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [np.random.default_rng(c).uniform(-1.0, 1.0, n) for c in children]


def residual_ensemble(A, M, count: int, seed: int = 0, tol: float = DEFAULT_TOL,
                      max_iter: int = DEFAULT_MAX_ITER, workers: int = 1) -> EnsembleResult:
    """PCG from a zero start on ``count`` random right-hand sides."""
    if count < 1:
        raise DiagnosticsError("ensemble count must be >= 1")
    rhs = ensemble_rhs(A.shape[0], count, seed)

    def run(b) -> CGResult:
        return pcg(A, b, M, tol=tol, max_iter=max_iter)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, rhs))
    else:
        results = [run(b) for b in rhs]
    return EnsembleResult(results)


# ---------------------------------------------------------------------------
# CSV

def _fmt(v) -> str:
    return f"{v:.17g}" if isinstance(v, (float, np.floating)) else str(v)


def write_csv(path, columns, rows, header: dict | None = None) -> None:
    """Comma-separated rows with ``#``-prefixed header comments.

    ``path`` of ``None`` or ``"-"`` writes to standard output.
    """
    if path is None or str(path) == "-":
        _write_rows(sys.stdout, columns, rows, header)
        return
    with open(path, "w", newline="") as fh:
        _write_rows(fh, columns, rows, header)


def _write_rows(fh, columns, rows, header) -> None:
    for k, v in (header or {}).items():
        fh.write(f"# {k}: {v}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])


def write_ensemble_csv(path, ensemble: EnsembleResult, header: dict | None = None) -> None:
    rows = ((run, it, rel) for run, r in enumerate(ensemble.results)
            for it, rel in enumerate(r.residual_history))
    write_csv(path, ["run", "iter", "relres"], rows, header)


def write_stress_csv(path, samples, header: dict | None = None) -> None:
    rows = ((s.x, s.y, s.s11, s.s22, s.s12, s.vm) for s in samples)
    write_csv(path, ["x", "y", "s11", "s22", "s12", "vm"], rows, header)
