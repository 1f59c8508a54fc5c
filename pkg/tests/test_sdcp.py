import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowsim import sdcp
from oracles import cvxpy_sdcp


def random_problem(k, seed, pd_floor=0.1):
    rng = np.random.default_rng(seed)
    alpha = rng.standard_normal((k, k))
    alpha = (alpha + alpha.T) / 2
    m = k * (k + 1) // 2
    M = rng.standard_normal((m, m))
    B = M @ M.T + pd_floor * np.eye(m)
    return alpha, B


def random_pd_tensor(k, seed, pd_floor=0.1):
    """Self-adjoint PD operator on Sym(k), as a 4-index tensor."""
    _, B = random_problem(k, seed, pd_floor)
    T = np.zeros((k, k, k, k))
    pairs = sdcp.svec_indices(k)
    for a, (i, j) in enumerate(pairs):
        col = sdcp.smat(B[:, a], k)
        w = 1.0 if i == j else 1.0 / np.sqrt(2.0)
        T[i, j] = w * col
        T[j, i] = w * col
    return T


@settings(deadline=None, max_examples=50)
@given(st.integers(1, 6), st.integers(0, 10_000))
def test_svec_smat_roundtrip(k, seed):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((k, k))
    M = (M + M.T) / 2
    assert np.allclose(sdcp.smat(sdcp.svec(M), k), M, atol=1e-14)
    # svec is an isometry
    assert np.isclose(sdcp.svec(M) @ sdcp.svec(M), np.sum(M * M), atol=1e-12)


def test_beta_matrix_from_tensor_consistent():
    k = 3
    T = random_pd_tensor(k, 1)
    B = sdcp.beta_matrix_from_tensor(T)
    rng = np.random.default_rng(2)
    for _ in range(5):
        X = rng.standard_normal((k, k))
        X = (X + X.T) / 2
        direct = np.einsum("ijkl,kl->ij", T, X)
        assert np.allclose(sdcp.smat(B @ sdcp.svec(X), k),
                           (direct + direct.T) / 2, atol=1e-12)


def test_1d_closed_form():
    assert sdcp.solve_sdcp_1d(-3.0, 1.5) == 2.0
    assert sdcp.solve_sdcp_1d(3.0, 1.5) == 0.0
    with pytest.raises(ValueError):
        sdcp.solve_sdcp_1d(1.0, 0.0)


def test_k1_solver_matches_closed_form():
    for alpha in (-2.0, -1e-6, 0.0, 0.5):
        p = sdcp.SdcpProblem.build(np.array([[alpha]]), np.array([[2.0]]))
        sol = sdcp.solve_sdcp(p)
        ref = sdcp.solve_sdcp_1d(alpha, 2.0)
        assert abs(sol.X[0, 0] - ref) <= 1e-12 * max(1.0, ref)


def test_asymmetric_beta_rejected():
    alpha = np.zeros((2, 2))
    B = np.eye(3)
    B[0, 1] = 0.3
    with pytest.raises(ValueError, match="asymmetry"):
        sdcp.SdcpProblem.build(alpha, B)


def test_regularization_flagged():
    alpha = -np.eye(2)
    B = np.zeros((3, 3))  # rank-deficient beta
    p = sdcp.SdcpProblem.build(alpha, B)
    assert p.regularized


def test_solver_matches_cvxpy():
    for k, seed in [(1, 0), (2, 1), (2, 2), (3, 3), (3, 4)]:
        T = random_pd_tensor(k, seed)
        rng = np.random.default_rng(seed + 100)
        alpha = rng.standard_normal((k, k))
        alpha = (alpha + alpha.T) / 2
        p = sdcp.SdcpProblem.build(alpha, sdcp.beta_matrix_from_tensor(T))
        sol = sdcp.solve_sdcp(p)
        ref = cvxpy_sdcp(alpha, T)
        assert np.allclose(sol.X, ref, atol=5e-6), (k, seed)


def test_kkt_residuals_certify_solutions():
    for seed in range(20):
        k = 1 + seed % 5
        alpha, B = random_problem(k, seed)
        p = sdcp.SdcpProblem.build(alpha, B)
        sol = sdcp.solve_sdcp(p)
        assert sol.converged
        assert max(sol.residual_psd, sol.residual_dual, sol.residual_comp) <= 1e-8


def test_warm_start_reaches_same_solution():
    alpha, B = random_problem(4, 9)
    p = sdcp.SdcpProblem.build(alpha, B)
    cold = sdcp.solve_sdcp(p)
    rng = np.random.default_rng(1)
    W = rng.standard_normal((4, 4))
    warm = sdcp.solve_sdcp(p, x0=W @ W.T)
    assert np.allclose(cold.X, warm.X, atol=1e-7)


@settings(deadline=None, max_examples=25)
@given(st.integers(1, 4), st.integers(0, 500),
       st.floats(0.01, 100.0))
def test_scale_invariance(k, seed, c):
    # X solves (alpha, beta) iff it solves (c alpha, c beta)
    alpha, B = random_problem(k, seed)
    p1 = sdcp.SdcpProblem.build(alpha, B)
    p2 = sdcp.SdcpProblem.build(c * alpha, c * B)
    x1 = sdcp.solve_sdcp(p1).X
    x2 = sdcp.solve_sdcp(p2).X
    assert np.allclose(x1, x2, atol=1e-7 * max(1, np.abs(x1).max()))


def test_k_cap_enforced():
    with pytest.raises(ValueError, match="k <="):
        sdcp.SdcpProblem.build(np.zeros((17, 17)),
                               np.eye(17 * 18 // 2))
