import numpy as np
import pytest
from hypothesis import given, strategies as st

from hpasm.febasis import (EDGE, INTERIOR, VERTEX, barycentric, build_basis, build_quadrature,
                           gauss_line, monomial_integral, tabulate)

REF = np.array([[-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]])


def edge_points(k, s):
    a, b = REF[(k + 1) % 3], REF[(k + 2) % 3]
    return a + 0.5 * (np.asarray(s)[:, None] + 1.0) * (b - a)


@pytest.mark.parametrize("a,b,exact", [(0, 0, 2.0), (1, 0, -2.0 / 3), (0, 1, -2.0 / 3),
                                       (2, 0, 2.0 / 3), (1, 1, 0.0)])
def test_monomial_integrals(a, b, exact):
    assert monomial_integral(a, b) == pytest.approx(exact, abs=1e-15)


@pytest.mark.parametrize("degree", [0, 1, 5, 8, 16, 24])
def test_quadrature_exactness(degree):
    q = build_quadrature(degree)
    assert q.exactness >= degree
    assert q.weights.sum() == pytest.approx(2.0, rel=1e-14)
    assert np.all(q.weights > 0)
    lam = barycentric(q.points)
    assert np.all(lam > 0)                       # strictly interior points
    x, y = q.points.T
    for d in range(degree + 1):
        for i in range(d + 1):
            assert q.weights @ (x ** i * y ** (d - i)) == pytest.approx(
                monomial_integral(i, d - i), abs=1e-13)


def test_quadrature_rejects_bad_degree():
    with pytest.raises(ValueError):
        build_quadrature(-1)
    with pytest.raises(ValueError):
        build_quadrature(10_000)


def test_gauss_line():
    s, w = gauss_line(7)
    assert w.sum() == pytest.approx(2.0)
    assert w @ s ** 6 == pytest.approx(2.0 / 7)


@pytest.mark.parametrize("p", [1, 2, 3, 4, 8, 12])
def test_basis_counts(p):
    b = build_basis(p)
    assert b.n == (p + 1) * (p + 2) // 2
    assert np.sum(b.kind == VERTEX) == 3
    assert np.sum(b.kind == EDGE) == 3 * (p - 1)
    assert np.sum(b.kind == INTERIOR) == (p - 1) * (p - 2) // 2
    for k in range(3):
        assert list(b.edge_degree[b.edge_ids(k)]) == list(range(2, p + 1))


def test_basis_rejects_degree_zero():
    with pytest.raises(ValueError):
        build_basis(0)


@pytest.mark.parametrize("p", [4, 7])
def test_vertex_functions_are_barycentric(p):
    b = build_basis(p)
    pts = build_quadrature(6).points
    vals, _ = tabulate(b, pts)
    np.testing.assert_allclose(vals[:, b.vertex_ids], barycentric(pts), atol=1e-14)
    vals, _ = tabulate(b, REF)
    np.testing.assert_allclose(vals, np.hstack([np.eye(3), np.zeros((3, b.n - 3))]), atol=1e-14)


@pytest.mark.parametrize("p", [4, 6, 9])
def test_trace_support(p):
    """Edge functions vanish on the other two edges; bubbles vanish on the boundary."""
    b = build_basis(p)
    s = np.linspace(-1, 1, 13)
    for k in range(3):
        vals, _ = tabulate(b, edge_points(k, s))
        others = np.setdiff1d(np.arange(b.n), b.trace_ids(k))
        assert np.abs(vals[:, others]).max() < 1e-13


@pytest.mark.parametrize("p", [4, 8])
def test_edge_trace_degree_and_parity(p):
    """On its edge, the degree-q function is a degree-q polynomial with parity (-1)^q."""
    b = build_basis(p)
    s = np.cos(np.pi * (np.arange(2 * p + 1) + 0.5) / (2 * p + 1))
    for k in range(3):
        vals, _ = tabulate(b, edge_points(k, s))
        flipped, _ = tabulate(b, edge_points(k, -s))
        for i in b.edge_ids(k):
            q = b.edge_degree[i]
            c = np.polynomial.legendre.legfit(s, vals[:, i], 2 * p)
            assert np.abs(c[q + 1:]).max() < 1e-10
            assert abs(c[q]) > 1e-6
            np.testing.assert_allclose(flipped[:, i], (-1.0) ** q * vals[:, i], atol=1e-13)


@pytest.mark.parametrize("p", [4, 8, 12])
def test_mass_matrix_is_spd(p):
    b = build_basis(p)
    q = build_quadrature(2 * p)
    vals, _ = tabulate(b, q.points)
    M = vals.T @ (q.weights[:, None] * vals)
    w = np.linalg.eigvalsh(M)
    assert w[0] > 1e-12 * w[-1]


@given(st.floats(0.01, 0.98), st.floats(0.01, 0.98), st.integers(1, 9))
def test_gradients_match_finite_differences(u, v, p):
    if u + v >= 0.99:
        return
    x = np.array([[2 * u - 1, 2 * v - 1]])
    h = 1e-6
    b = build_basis(p)
    _, g = tabulate(b, x)
    for d in range(2):
        e = np.zeros(2)
        e[d] = h
        fp, _ = tabulate(b, x + e)
        fm, _ = tabulate(b, x - e)
        np.testing.assert_allclose(g[0, :, d], (fp[0] - fm[0]) / (2 * h), atol=1e-6)


@given(st.integers(4, 10))
def test_vertex_functions_partition_unity(p):
    b = build_basis(p)
    pts = build_quadrature(p).points
    vals, grads = tabulate(b, pts)
    np.testing.assert_allclose(vals[:, b.vertex_ids].sum(axis=1), 1.0, atol=1e-14)
    np.testing.assert_allclose(grads[:, b.vertex_ids].sum(axis=1), 0.0, atol=1e-14)
