import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, strategies as st

from hpasm.assembly import FESpace, assemble_global, assemble_load, interpolate_linear
from hpasm.extension import (FLAVORS, ExtensionError, build_extension, divergence_at_quadrature,
                             element_div_coefficients, interior_div_basis, project_interior_div,
                             schur_complement, static_condense, tau_B_estimate)
from hpasm.mesh import cook_mesh, square_mesh

from conftest import make_mesh

FREE = {"left": "free", "right": "free", "top": "free", "bottom": "free"}
RIGID = [lambda x: np.tile([1.0, 0.0], (len(x), 1)),
         lambda x: np.tile([0.0, 1.0], (len(x), 1)),
         lambda x: np.column_stack([-x[:, 1], x[:, 0]])]


@pytest.fixture(scope="module")
def space5():
    return FESpace(square_mesh(1, 2, tags={"left": "dirichlet", "right": "free",
                                           "top": "free", "bottom": "free"}), 5)


def random_vector(space, seed):
    return np.random.default_rng(seed).standard_normal(space.dofmap.n_total)


@pytest.mark.parametrize("p", [4, 5, 6, 8, 10])
def test_interior_div_basis_rank_and_orthonormality(p):
    """dim div X_I = 2 n_I minus the divergence-free bubbles (curls of degree p+1 H^2_0 bubbles)."""
    from hpasm.febasis import build_quadrature
    D = interior_div_basis(p)
    n_int = (p - 1) * (p - 2) // 2
    assert D.rank == 2 * n_int - (p - 3) * (p - 4) // 2
    w = build_quadrature(2 * p).weights
    np.testing.assert_allclose(D.values.T @ (w[:, None] * D.values), np.eye(D.rank), atol=1e-12)
    # divergences of interior functions have zero mean
    np.testing.assert_allclose(w @ D.values, 0.0, atol=1e-12)


@pytest.mark.parametrize("flavor", FLAVORS)
@pytest.mark.parametrize("lam", [10.0, 1e7])
def test_rigid_motions_are_reproduced(flavor, lam):
    space = FESpace(square_mesh(1, 2, tags=FREE), 5)
    ext = build_extension(space, 1.0, lam, flavor)
    for f in RIGID:
        r = interpolate_linear(space, f)[space.dofmap.free]
        assert np.abs(ext.extend(r) - r).max() < 1e-13
        if flavor == "stokes":
            rb = np.array([r[row[space.local_boundary]] for row in space.element_free_table()])
            q = np.einsum("krb,kb->kr", ext.multipliers, rb)
            assert np.abs(q).max() < 1e-13


@given(st.integers(0, 10_000), st.sampled_from([1e1, 1e3, 1e5, 1e7]))
def test_stokes_extension_is_interior_divergence_free(seed, lam):
    space = FESpace(cook_mesh(), 4)
    ext = build_extension(space, 1.0, lam, "stokes")
    v = random_vector(space, seed)
    Sv = ext.extend(v)
    scale = np.abs(divergence_at_quadrature(space, Sv)).max()
    assert np.abs(element_div_coefficients(space, Sv)).max() <= 1e-10 * scale


@pytest.mark.parametrize("flavor", FLAVORS)
@given(seed=st.integers(0, 10_000))
def test_complement_divergence_unchanged(space5, flavor, seed):
    """Pi_I^perp div T_B v = Pi_I^perp div v: extensions only change interior DOFs."""
    ext = build_extension(space5, 1.0, 1e5, flavor)
    v = random_vector(space5, seed)
    f = divergence_at_quadrature(space5, ext.extend(v)) - divergence_at_quadrature(space5, v)
    np.testing.assert_allclose(project_interior_div(space5, f), f, atol=1e-10 * np.abs(f).max())
    np.testing.assert_allclose(ext.extend(v)[space5.dofmap.boundary], v[space5.dofmap.boundary])


@given(st.integers(0, 10_000), st.sampled_from([1e1, 1e4, 1e7]))
def test_harmonic_extension_is_energy_orthogonal(seed, lam):
    space = FESpace(cook_mesh(), 4)
    ext = build_extension(space, 1.0, lam, "elastic")
    A = assemble_global(space, 1.0, lam)
    v = random_vector(space, seed)
    g = A @ ext.extend(v)
    I = space.dofmap.interior
    assert np.abs(g[I]).max() <= 1e-10 * np.abs(g).max()


def test_inexact_extension_is_b_orthogonal(space5):
    ext = build_extension(space5, 1.0, 1e5, "inexact")
    B = space5.element_b_matrices(1.0, 1e5)
    li = space5.local_interior
    for K in range(space5.mesh.n_triangles):
        E = ext.element_matrix(K)
        r = B[K] @ E
        assert np.abs(r[li]).max() <= 1e-10 * np.abs(r).max()


@pytest.mark.parametrize("lam", [10.0, 1e5])
def test_condensed_operator_is_schur_complement(space5, lam):
    A = assemble_global(space5, 1.0, lam)
    cond = static_condense(A, build_extension(space5, 1.0, lam, "elastic"))
    S = schur_complement(A, space5)
    np.testing.assert_allclose(cond.A_BB.toarray(), S, atol=1e-10 * np.abs(S).max())


def test_condensed_solve_matches_direct_solve():
    space = FESpace(cook_mesh(), 4)
    sys_ = assemble_load(space, 1.0, 1e3, "cook")
    cond = static_condense(sys_.A, build_extension(space, 1.0, 1e3, "elastic"))
    u_B = spla.spsolve(cond.A_BB.tocsc(), cond.boundary_rhs(sys_.rhs))
    u = cond.recover(u_B, sys_.rhs)
    ref = spla.spsolve(sys_.A.tocsc(), sys_.rhs)
    np.testing.assert_allclose(u, ref, atol=1e-9 * np.abs(ref).max())


@pytest.mark.parametrize("flavor", FLAVORS)
def test_recover_from_exact_boundary_values(flavor):
    space = FESpace(cook_mesh(), 4)
    sys_ = assemble_load(space, 1.0, 1e3, "cook")
    cond = static_condense(sys_.A, build_extension(space, 1.0, 1e3, flavor))
    ref = spla.spsolve(sys_.A.tocsc(), sys_.rhs)
    u = cond.recover(ref[space.dofmap.boundary], sys_.rhs)
    np.testing.assert_allclose(u, ref, atol=1e-9 * np.abs(ref).max())


def test_unknown_flavor_rejected(space5):
    with pytest.raises(ValueError):
        build_extension(space5, 1.0, 1.0, "harmonic")


def test_degree_without_bubbles_gives_trivial_extension():
    space = FESpace(square_mesh(1, 2), 2)
    ext = build_extension(space, 1.0, 1.0, "stokes")
    assert ext.interior_maps.shape[1] == 0
    assert ext.global_matrix.shape == (space.dofmap.n_total, space.dofmap.n_boundary)


TWO = dict(vertices=[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]], triangles=[[0, 1, 2], [0, 2, 3]])


@pytest.mark.parametrize("flavor", FLAVORS)
def test_tau_B_bounded_and_stokes_pi_term_vanishes(flavor):
    space = FESpace(make_mesh(TWO["vertices"], TWO["triangles"]), 4)
    taus = [tau_B_estimate(space, build_extension(space, 1.0, lam, flavor)) for lam in (1e1, 1e7)]
    assert all(np.isfinite(t.tau) and t.tau >= 1.0 - 1e-12 for t in taus)
    if flavor == "stokes":
        assert max(t.pi_term_max for t in taus) < 1e-10


def test_tau_B_dense_limit(space5):
    with pytest.raises(ExtensionError):
        tau_B_estimate(space5, build_extension(space5, 1.0, 1.0, "elastic"), limit=10)
