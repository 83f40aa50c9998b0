"""Hierarchical degree-p shape functions and quadrature on the reference triangle.

Barycentric coordinates on the reference triangle (-1,-1), (1,-1), (-1,1)::

    l0 = -(x + y) / 2,   l1 = (1 + x) / 2,   l2 = (1 + y) / 2

Function ordering: 3 vertex functions, then for each local edge ``k`` the
edge functions of edge degree ``q = 2..p``, then the interior bubbles.
Edge functions are ``li * lj * P^(1,1)_{q-2}(lj - li, li + lj)`` (homogeneous
Jacobi polynomial), so their trace on the own edge has degree exactly ``q``
and they vanish on the other two edges. Because of this grading the
functions with ``q <= 4`` span the full degree-4 trace space on every edge.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import factorial, comb

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import roots_jacobi

VERTEX, EDGE, INTERIOR = 0, 1, 2

_GRAD_BARY = np.array([[-0.5, -0.5], [0.5, 0.0], [0.0, 0.5]])
MAX_QUADRATURE_DEGREE = 80


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    exactness: int


@dataclass(frozen=True)
class ReferenceBasis:
    degree: int
    kind: np.ndarray          # VERTEX / EDGE / INTERIOR per function
    entity: np.ndarray        # local vertex, local edge, or -1
    edge_degree: np.ndarray   # q for edge functions, 1 for vertex, 0 for interior
    interior_index: tuple = field(repr=False)  # (a, b) Jacobi indices of the bubbles

    @property
    def n(self) -> int:
        return len(self.kind)

    @property
    def vertex_ids(self) -> np.ndarray:
        return np.flatnonzero(self.kind == VERTEX)

    @property
    def interior_ids(self) -> np.ndarray:
        return np.flatnonzero(self.kind == INTERIOR)

    @property
    def boundary_ids(self) -> np.ndarray:
        return np.flatnonzero(self.kind != INTERIOR)

    def edge_ids(self, k: int) -> np.ndarray:
        return np.flatnonzero((self.kind == EDGE) & (self.entity == k))

    def trace_ids(self, k: int) -> np.ndarray:
        """Functions with nonzero trace on local edge ``k``."""
        i, j = (k + 1) % 3, (k + 2) % 3
        return np.concatenate([[i, j], self.edge_ids(k)])

    def tabulate(self, points):
        return tabulate(self, points)


# ---------------------------------------------------------------------------
# quadrature

def monomial_integral(a: int, b: int) -> float:
    """Exact integral of x**a * y**b over the reference triangle."""
    return float(_monomial_integral_exact(a, b))


@lru_cache(maxsize=None)
def _monomial_integral_exact(a: int, b: int) -> Fraction:
    # x = 2s - 1, y = 2t - 1 on the unit simplex, dx dy = 4 ds dt
    total = Fraction(0)
    for i in range(a + 1):
        for j in range(b + 1):
            coef = comb(a, i) * comb(b, j) * 2 ** (i + j) * (-1) ** (a - i + b - j)
            total += coef * Fraction(factorial(i) * factorial(j), factorial(i + j + 2))
    return 4 * total


@lru_cache(maxsize=None)
def build_quadrature(degree: int) -> QuadratureRule:
    """Collapsed Gauss rule (Gauss-Legendre x Gauss-Jacobi(1,0)) exact to ``degree``."""
    if degree < 0:
        raise ValueError("quadrature degree must be >= 0")
    if degree > MAX_QUADRATURE_DEGREE:
        raise ValueError(f"quadrature degree {degree} beyond supported range "
                         f"({MAX_QUADRATURE_DEGREE})")
    n = degree // 2 + 1
    a, wa = leggauss(n)
    b, wb = roots_jacobi(n, 1.0, 0.0)
    A, B = np.meshgrid(a, b, indexing="ij")
    x = 0.5 * (1.0 + A) * (1.0 - B) - 1.0
    pts = np.column_stack([x.ravel(), B.ravel()])
    w = 0.5 * np.outer(wa, wb).ravel()
    rule = QuadratureRule(points=pts, weights=w, exactness=2 * n - 1)
    _validate(rule, degree)
    return rule


def _validate(rule: QuadratureRule, degree: int) -> None:
    x, y = rule.points.T
    for d in range(degree + 1):
        for i in range(d + 1):
            exact = monomial_integral(i, d - i)
            got = rule.weights @ (x ** i * y ** (d - i))
            if abs(got - exact) > 1e-12 * max(1.0, abs(exact)):
                raise RuntimeError(f"quadrature failed exactness check at x^{i} y^{d - i}")


def gauss_line(degree: int):
    """Gauss-Legendre points/weights on [-1, 1] exact to ``degree``."""
    return leggauss(degree // 2 + 1)


# ---------------------------------------------------------------------------
# basis

def barycentric(points) -> np.ndarray:
    p = np.atleast_2d(np.asarray(points, dtype=float))
    x, y = p[:, 0], p[:, 1]
    return np.column_stack([-(x + y) / 2, (1 + x) / 2, (1 + y) / 2])


def _mul(f, g):
    return f[0] * g[0], f[1] * g[0][:, None] + f[0][:, None] * g[1]


def _lin(*terms):
    """Linear combination sum(c * jet)."""
    val = sum(c * f[0] for c, f in terms)
    grad = sum(c * f[1] for c, f in terms)
    return val, grad


def _jacobi_jets(n, alpha, beta, x, t):
    """Homogeneous Jacobi polynomials t^m P_m^(alpha,beta)(x/t), m = 0..n, as jets."""
    npts = len(x[0])
    one = (np.ones(npts), np.zeros((npts, 2)))
    out = [one]
    if n >= 1:
        out.append(_lin((0.5 * (alpha + beta + 2), x), (0.5 * (alpha - beta), t)))
    t2 = _mul(t, t)
    for m in range(1, n):
        s = 2 * m + alpha + beta
        a = 2 * (m + 1) * (m + alpha + beta + 1) * s
        b = (s + 1) * (s + 2) * s
        c = (s + 1) * (alpha ** 2 - beta ** 2)
        d = 2 * (m + alpha) * (m + beta) * (s + 2)
        lin = _lin((b, x), (c, t))
        nxt = _lin((1.0 / a, _mul(lin, out[m])), (-d / a, _mul(t2, out[m - 1])))
        out.append(nxt)
    return out[: n + 1]


@lru_cache(maxsize=None)
def build_basis(p: int) -> ReferenceBasis:
    if p < 1:
        raise ValueError("polynomial degree must be >= 1")
    kind, entity, qdeg = [VERTEX] * 3, [0, 1, 2], [1, 1, 1]
    for k in range(3):
        for q in range(2, p + 1):
            kind.append(EDGE)
            entity.append(k)
            qdeg.append(q)
    interior = [(a, s - a) for s in range(p - 2) for a in range(s + 1)]
    for _ in interior:
        kind.append(INTERIOR)
        entity.append(-1)
        qdeg.append(0)
    return ReferenceBasis(degree=p, kind=np.array(kind), entity=np.array(entity),
                          edge_degree=np.array(qdeg), interior_index=tuple(interior))


def tabulate(basis: ReferenceBasis, points):
    """Values (npts, n) and reference gradients (npts, n, 2) at ``points``."""
    lam = barycentric(points)
    npts = len(lam)
    L = [(lam[:, i], np.broadcast_to(_GRAD_BARY[i], (npts, 2)).copy()) for i in range(3)]
    p = basis.degree
    vals = np.empty((npts, basis.n))
    grads = np.empty((npts, basis.n, 2))
    col = 0
    for i in range(3):
        vals[:, col], grads[:, col] = L[i]
        col += 1
    for k in range(3):
        i, j = (k + 1) % 3, (k + 2) % 3
        if p < 2:
            continue
        kern = _jacobi_jets(p - 2, 1.0, 1.0, _lin((1, L[j]), (-1, L[i])), _lin((1, L[i]), (1, L[j])))
        bij = _mul(L[i], L[j])
        for q in range(2, p + 1):
            vals[:, col], grads[:, col] = _mul(bij, kern[q - 2])
            col += 1
    if basis.interior_index:
        bubble = _mul(_mul(L[0], L[1]), L[2])
        one = (np.ones(npts), np.zeros((npts, 2)))
        first = _jacobi_jets(p - 3, 2.0, 2.0, _lin((1, L[1]), (-1, L[0])), _lin((1, L[0]), (1, L[1])))
        x2 = _lin((2, L[2]), (-1, one))
        second = {a: _jacobi_jets(p - 3 - a, 2.0 * a + 5.0, 2.0, x2, one) for a in range(p - 2)}
        for a, b in basis.interior_index:
            vals[:, col], grads[:, col] = _mul(bubble, _mul(first[a], second[a][b]))
            col += 1
    return vals, grads
