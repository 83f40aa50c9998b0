"""Preconditioned conjugate gradients with Lanczos condition estimates.

Both the recurrence residual ``r_k`` of the CG iteration and the true
residual ``b - A x_k`` are recorded relative to ``r_0`` at every iteration.
By default the iteration stops on the recurrence residual: for nearly
incompressible problems the true residual cannot drop below roughly
``eps * ||A|| ||x|| / ||b||`` (about 1e-8 at lam/mu = 1e7), so a true-residual
test at 1e-12 would never terminate. ``stop="true"`` selects the stricter
test.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 500
DENSE_LIMIT = 4000


class KrylovError(RuntimeError):
    pass


class BreakdownError(KrylovError):
    """Non-positive curvature: operator or preconditioner is not SPD."""


@dataclass
class CGResult:
    x: np.ndarray = field(repr=False)
    iterations: int
    converged: bool
    true_history: np.ndarray = field(repr=False)        # ||b - A x_k|| / ||r_0||, entry 0 is 1
    residual_history: np.ndarray = field(repr=False)    # recurrence ||r_k|| / ||r_0||
    alphas: np.ndarray = field(repr=False)
    betas: np.ndarray = field(repr=False)

    @property
    def final_residual(self) -> float:
        return float(self.residual_history[-1])

    @property
    def kappa_estimate(self):
        """(lambda_min, lambda_max, kappa) from the Lanczos tridiagonal, or None."""
        if len(self.alphas) < 2:
            return None
        return estimate_condition(self.alphas, self.betas)

    @property
    def mean_rate(self) -> float:
        """Geometric-mean residual reduction factor per iteration."""
        if self.iterations == 0:
            return 0.0
        return float(self.residual_history[-1] ** (1.0 / self.iterations))


def _as_apply(op):
    if op is None:
        return lambda v: v.copy()
    if callable(op) and not sp.issparse(op) and not isinstance(op, np.ndarray):
        return op
    if hasattr(op, "matvec") and not sp.issparse(op):
        return op.matvec
    return lambda v: op @ v


STOP_RULES = ("recurrence", "true")


def pcg(A, b, M=None, x0=None, tol: float = DEFAULT_TOL,
        max_iter: int = DEFAULT_MAX_ITER, stop: str = "recurrence") -> CGResult:
    """Solve ``A x = b`` with preconditioner ``M`` (an approximation of ``A^{-1}``)."""
    if stop not in STOP_RULES:
        raise ValueError(f"unknown stopping rule {stop!r}; choose from {STOP_RULES}")
    if tol < 0 or max_iter < 0:
        raise ValueError("tol and max_iter must be non-negative")
    applyA, applyM = _as_apply(A), _as_apply(M)
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - applyA(x)
    r0 = float(np.linalg.norm(r))
    hist, rec = [1.0], [1.0]
    alphas, betas = [], []
    if r0 == 0.0:
        return CGResult(x, 0, True, np.array(hist), np.array(rec), np.array(alphas), np.array(betas))
    z = applyM(r)
    rz = float(r @ z)
    if rz <= 0:
        raise BreakdownError("preconditioner is not positive definite (r^T M r <= 0)")
    p = z.copy()
    converged = False
    it = 0
    while it < max_iter:
        Ap = applyA(p)
        pAp = float(p @ Ap)
        if pAp <= 0:
            raise BreakdownError(f"non-positive curvature p^T A p = {pAp:.3e} at iteration {it}")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        it += 1
        alphas.append(alpha)
        true_res = float(np.linalg.norm(b - applyA(x))) / r0
        hist.append(true_res)
        rec_res = float(np.linalg.norm(r)) / r0
        rec.append(rec_res)
        if (rec_res if stop == "recurrence" else true_res) <= tol:
            converged = True
            break
        z = applyM(r)
        rz_new = float(r @ z)
        if rz_new <= 0:
            if rec_res < 1e3 * np.finfo(float).eps:
                break  # residual is pure round-off; nothing left to reduce
            raise BreakdownError("preconditioner is not positive definite (r^T M r <= 0)")
        beta = rz_new / rz
        betas.append(beta)
        rz = rz_new
        p = z + beta * p
    return CGResult(x, it, converged, np.array(hist), np.array(rec),
                    np.array(alphas), np.array(betas[: max(len(alphas) - 1, 0)]))


def lanczos_tridiagonal(alphas, betas):
    """Diagonal and off-diagonal of the Lanczos matrix built from CG coefficients."""
    a = np.asarray(alphas, dtype=float)
    b = np.asarray(betas, dtype=float)[: len(a) - 1]
    d = 1.0 / a
    d[1:] += b / a[:-1]
    e = np.sqrt(b) / a[:-1]
    return d, e


def estimate_condition(alphas, betas):
    """Extreme Ritz values of P^{-1} A and their ratio."""
    if len(alphas) < 2:
        raise KrylovError("condition estimate needs at least 2 CG iterations")
    d, e = lanczos_tridiagonal(alphas, betas)
    theta = sla.eigvalsh_tridiagonal(d, e)
    lmin, lmax = float(theta[0]), float(theta[-1])
    if lmin <= 0:
        raise BreakdownError(f"non-positive Ritz value {lmin:.3e}")
    return lmin, lmax, lmax / lmin


def cg_rate(kappa: float) -> float:
    """Classical CG contraction factor (sqrt(kappa) - 1) / (sqrt(kappa) + 1)."""
    s = np.sqrt(kappa)
    return float((s - 1.0) / (s + 1.0))


def _dense(A) -> np.ndarray:
    return A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)


def dense_spectrum(A, M=None, limit: int = DENSE_LIMIT) -> np.ndarray:
    """Eigenvalues of M A (M an SPD approximate inverse) by a dense symmetric eigensolve."""
    Ad = _dense(A)
    n = Ad.shape[0]
    if n > limit:
        raise KrylovError(f"dense eigensolve limited to {limit} unknowns (got {n})")
    Ad = 0.5 * (Ad + Ad.T)
    if M is None:
        return np.linalg.eigvalsh(Ad)
    applyM = M if callable(M) and not sp.issparse(M) and not isinstance(M, np.ndarray) else (lambda X: M @ X)
    Pinv = np.asarray(applyM(np.eye(n)), dtype=float)
    Pinv = 0.5 * (Pinv + Pinv.T)
    try:
        L = np.linalg.cholesky(Pinv)
    except np.linalg.LinAlgError:
        raise BreakdownError("preconditioner is not positive definite") from None
    S = L.T @ Ad @ L
    return np.linalg.eigvalsh(0.5 * (S + S.T))


def dense_condition_oracle(A, M=None, limit: int = DENSE_LIMIT) -> float:
    theta = dense_spectrum(A, M, limit)
    if theta[0] <= 0:
        raise BreakdownError(f"preconditioned operator has eigenvalue {theta[0]:.3e} <= 0")
    return float(theta[-1] / theta[0])
