import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowsim import predictions as pred
from flowsim.objective import EosToyParams, make_eos_toy, make_quadratic


def test_predicted_loss_bar():
    assert pred.predicted_loss_bar(1.5, None) == 1.5
    X = np.array([[2.0, 0.1], [0.1, 0.5]])
    assert np.isclose(pred.predicted_loss_bar(1.5, X), 4.0)


def test_predicted_grad_norm_sq_quadratic_identity():
    # on a quadratic at the origin-centered oscillation, the time-averaged
    # squared gradient gains 4 tr((PU) X (PU)^T)
    P = np.array([10.0, 10.0])
    U = np.array([[1.0], [0.0]]) / np.sqrt(10.0)
    X = np.array([[0.3]])
    got = pred.predicted_grad_norm_sq(2.0, P, U, X)
    assert np.isclose(got, 2.0 + 4 * 0.3 * 10.0)
    assert pred.predicted_grad_norm_sq(2.0, P, None, None) == 2.0


def test_oscillation_variances_lifting():
    rng = np.random.default_rng(0)
    P = rng.uniform(1.0, 5.0, 4)
    # P-orthonormal 2-column basis
    raw = rng.standard_normal((4, 2))
    W = raw / np.sqrt(P)[:, None]
    q, _ = np.linalg.qr(np.sqrt(P)[:, None] * W)
    U = q / np.sqrt(P)[:, None]
    A = rng.standard_normal((2, 2))
    X = A @ A.T
    osc = pred.oscillation_variances(P, U, X)
    assert np.allclose(osc.V.T @ osc.V, np.eye(2), atol=1e-12)
    assert np.isclose(osc.lam.sum(), np.trace(X))
    # spectrum of P^1/2 U X U^T P^1/2 directly
    M = np.sqrt(P)[:, None] * U @ X @ U.T * np.sqrt(P)[None, :]
    ref = np.sort(np.linalg.eigvalsh(M))[::-1][:2]
    assert np.allclose(osc.lam, ref, atol=1e-10)


def test_measure_whitened_displacement():
    P = np.array([4.0, 1.0])
    V = np.eye(2)
    d = pred.measure_whitened_displacement([1.0, 2.0], [0.0, 0.0], P, V)
    assert np.allclose(d, [4.0, 4.0])


class TestGaussianSmooth:
    def test_constant_preserved(self):
        s = pred.gaussian_smooth(np.full(200, 3.7), bandwidth=10)
        assert np.allclose(s, 3.7, atol=1e-12)

    def test_linear_preserved_in_interior(self):
        x = np.arange(500, dtype=float)
        s = pred.gaussian_smooth(x, bandwidth=10)
        assert np.allclose(s[60:-60], x[60:-60], atol=1e-8)

    def test_kills_period2(self):
        x = 5.0 + (-1.0) ** np.arange(400)
        s = pred.gaussian_smooth(x, bandwidth=20)
        assert np.allclose(s[100:-100], 5.0, atol=1e-6)

    def test_bad_bandwidth(self):
        with pytest.raises(ValueError):
            pred.gaussian_smooth([1.0], bandwidth=0.0)

    def test_empty(self):
        assert len(pred.gaussian_smooth([], bandwidth=5)) == 0


@settings(deadline=None, max_examples=30)
@given(st.integers(3, 40), st.integers(0, 1000))
def test_midpoints_annihilate_period2(n, seed):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(2)
    d = rng.standard_normal(2)
    traj = [c + ((-1.0) ** t) * d for t in range(n)]
    mids = pred.second_order_midpoints(traj)
    assert len(mids) == n - 2
    for mid in mids:
        assert np.allclose(mid, c, atol=1e-12)


def test_midpoints_need_three_points():
    with pytest.raises(ValueError):
        pred.second_order_midpoints([np.zeros(2), np.zeros(2)])


def test_subquadraticity_zero_on_cubic_landscape():
    # toy Hessian is linear in w, so the linear model of u^T H u is exact
    o = make_eos_toy(EosToyParams(a=0.01, y_star=300.0))
    d = pred.subquadraticity_diagnostic(o, np.array([0.5, 150.0]),
                                        np.array([-0.5, 151.0]))
    assert d["max_rel_deviation"] < 1e-9


def test_subquadraticity_flags_quartic():
    from flowsim.objective import ObjectiveOracle

    def loss(w):
        return float(0.25 * w[0] ** 4 + 0.5 * w[1] ** 2)

    def grad(w):
        return np.array([w[0] ** 3, w[1]])

    def hvp(w, v):
        return np.array([3 * w[0] ** 2 * v[0], v[1]])

    def third(w, u, v):
        return np.array([6 * w[0] * u[0] * v[0], 0.0])

    o = ObjectiveOracle(dim=2, loss=loss, grad=grad, hvp=hvp,
                        third_bilinear=third)
    d = pred.subquadraticity_diagnostic(o, np.array([4.0, 0.1]),
                                        np.array([1.0, 0.1]))
    assert d["max_rel_deviation"] > 0.1
