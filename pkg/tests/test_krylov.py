import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp
from hypothesis import given, strategies as st

from hpasm.krylov import (BreakdownError, KrylovError, cg_rate, dense_condition_oracle,
                          dense_spectrum, estimate_condition, lanczos_tridiagonal, pcg)


def random_spd(n, kappa, seed):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = np.geomspace(1.0, kappa, n)
    return (Q * w) @ Q.T, w


@pytest.mark.parametrize("kappa", [1.0, 10.0, 1e3])
def test_cg_reaches_tolerance(kappa):
    A, _ = random_spd(40, kappa, 0)
    b = np.ones(40)
    res = pcg(A, b, tol=1e-12, max_iter=400)
    assert res.converged
    assert res.final_residual <= 1e-12
    np.testing.assert_allclose(A @ res.x, b, atol=1e-9 * kappa)
    assert res.residual_history[0] == 1.0 and res.true_history[0] == 1.0
    assert len(res.residual_history) == res.iterations + 1


def test_finite_termination_on_few_eigenvalues():
    A = np.diag(np.repeat([1.0, 3.0, 7.0], 20))
    res = pcg(A, np.arange(1.0, 61.0), tol=1e-12)
    assert res.converged and res.iterations <= 4


def test_true_and_recurrence_residuals_agree_when_well_conditioned():
    A, _ = random_spd(50, 20.0, 1)
    res = pcg(A, np.random.default_rng(1).uniform(-1, 1, 50), tol=1e-10)
    assert np.max(np.abs(res.true_history - res.residual_history)) <= 10 * 1e-10


def test_lanczos_recovers_extreme_eigenvalues():
    A, w = random_spd(30, 100.0, 2)
    res = pcg(A, np.random.default_rng(2).uniform(-1, 1, 30), tol=1e-14, max_iter=200)
    lmin, lmax, kappa = res.kappa_estimate
    assert lmin == pytest.approx(w[0], rel=1e-6)
    assert lmax == pytest.approx(w[-1], rel=1e-6)
    assert kappa == pytest.approx(100.0, rel=1e-5)


def test_lanczos_tridiagonal_matches_matrix_for_two_steps():
    """Two CG steps on diag(1, 2) from b = (1, 1): the Lanczos matrix has eigenvalues 1 and 2."""
    res = pcg(np.diag([1.0, 2.0]), np.ones(2), tol=0.0, max_iter=2)
    d, e = lanczos_tridiagonal(res.alphas, np.r_[res.betas, 0.0])
    T = np.diag(d) + np.diag(e, 1) + np.diag(e, -1)
    np.testing.assert_allclose(np.linalg.eigvalsh(T), [1.0, 2.0], rtol=1e-12)


def test_preconditioning_with_exact_inverse_takes_one_step():
    A, _ = random_spd(25, 1e4, 3)
    res = pcg(A, np.ones(25), M=np.linalg.inv(A), tol=1e-10)
    assert res.iterations == 1


def test_preconditioner_forms_are_equivalent():
    A, _ = random_spd(20, 50.0, 4)
    D = np.diag(1.0 / np.diag(A))
    b = np.ones(20)
    r1 = pcg(A, b, D)
    r2 = pcg(sp.csr_matrix(A), b, lambda v: D @ v)
    np.testing.assert_allclose(r1.x, r2.x, rtol=1e-9)
    assert abs(r1.iterations - r2.iterations) <= 1


def test_zero_rhs_and_initial_guess():
    A, _ = random_spd(10, 5.0, 5)
    res = pcg(A, np.zeros(10))
    assert res.converged and res.iterations == 0
    x = np.linalg.solve(A, np.ones(10))
    res = pcg(A, np.ones(10), x0=x + 1e-3)
    assert res.converged
    np.testing.assert_allclose(res.x, x, rtol=1e-9)


def test_breakdown_on_indefinite_operator():
    with pytest.raises(BreakdownError):
        pcg(np.diag([1.0, -1.0]), np.array([1.0, 2.0]))
    with pytest.raises(BreakdownError):
        pcg(np.eye(2), np.ones(2), M=-np.eye(2))


def test_bad_arguments():
    with pytest.raises(ValueError):
        pcg(np.eye(2), np.ones(2), stop="sometimes")
    with pytest.raises(ValueError):
        pcg(np.eye(2), np.ones(2), tol=-1.0)
    with pytest.raises(KrylovError):
        estimate_condition([1.0], [])


def test_true_residual_stopping_rule():
    A, _ = random_spd(30, 10.0, 6)
    res = pcg(A, np.ones(30), tol=1e-8, stop="true")
    assert res.converged and res.true_history[-1] <= 1e-8


def test_max_iter_reports_non_convergence():
    A, _ = random_spd(30, 1e4, 7)
    res = pcg(A, np.ones(30), max_iter=3)
    assert not res.converged and res.iterations == 3


@pytest.mark.parametrize("kappa,rate", [(1.0, 0.0), (4.0, 1.0 / 3.0), (9.0, 0.5)])
def test_cg_rate(kappa, rate):
    assert cg_rate(kappa) == pytest.approx(rate)


def test_dense_spectrum_matches_generalized_eigensolve():
    A, _ = random_spd(15, 30.0, 8)
    P, _ = random_spd(15, 5.0, 9)               # P approximates A; M = P^{-1}
    M = np.linalg.inv(P)
    ref = sla.eigh(A, P, eigvals_only=True)
    np.testing.assert_allclose(dense_spectrum(A, M), ref, rtol=1e-10)
    np.testing.assert_allclose(dense_spectrum(A, lambda X: M @ X), ref, rtol=1e-10)
    assert dense_condition_oracle(A, M) == pytest.approx(ref[-1] / ref[0], rel=1e-10)
    with pytest.raises(KrylovError):
        dense_spectrum(A, M, limit=10)
    with pytest.raises(BreakdownError):
        dense_spectrum(A, -np.eye(15))


@given(st.integers(2, 30), st.floats(1.0, 1e4), st.integers(0, 10_000))
def test_cg_solves_random_spd_systems(n, kappa, seed):
    A, w = random_spd(n, kappa, seed)
    b = np.random.default_rng(seed + 1).uniform(-1, 1, n)
    res = pcg(A, b, tol=1e-12, max_iter=10 * n)
    assert res.converged
    x = np.linalg.solve(A, b)
    assert np.linalg.norm(res.x - x) <= 1e-8 * kappa * np.linalg.norm(x)


@given(st.integers(10, 40), st.floats(2.0, 1e3), st.integers(0, 10_000))
def test_energy_error_obeys_classical_bound(n, kappa, seed):
    A, _ = random_spd(n, kappa, seed)
    b = np.random.default_rng(seed).uniform(-1, 1, n)
    x = np.linalg.solve(A, b)
    e0 = np.sqrt(x @ A @ x)
    rho = cg_rate(kappa)
    for k in (1, 3, 6):
        res = pcg(A, b, tol=0.0, max_iter=k)
        e = res.x - x
        assert np.sqrt(e @ A @ e) <= 2 * rho ** k * e0 * (1 + 1e-8) + 1e-12
