import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowsim import objective
from oracles import fd_grad, fd_hess, fd_hvp, fd_third, top_eig, toy_hessian


def test_quadratic_basics():
    H = np.array([[2.0, 0.3], [0.3, 1.0]])
    b = np.array([0.5, -1.0])
    o = objective.make_quadratic(H, b)
    w = np.array([0.7, -0.2])
    assert np.allclose(o.grad(w), H @ w - b)
    assert np.allclose(o.hvp(w, b), H @ b)
    assert np.allclose(o.third_bilinear(w, b, b), 0.0)
    assert np.isclose(o.loss(w), 0.5 * w @ H @ w - b @ w)


def test_quadratic_rejects_asymmetric():
    with pytest.raises(ValueError):
        objective.make_quadratic(np.array([[1.0, 1.0], [0.0, 1.0]]))


toy_params = st.tuples(st.floats(0.005, 0.5), st.floats(5.0, 400.0))
toy_points = st.tuples(st.floats(-2.0, 2.0), st.floats(0.5, 300.0))


@settings(deadline=None, max_examples=30)
@given(toy_params, toy_points)
def test_toy_derivatives_vs_fd(params, point):
    a, y_star = params
    o = objective.make_eos_toy(objective.EosToyParams(a=a, y_star=y_star))
    w = np.array(point)
    scale = max(1.0, abs(o.loss(w)))
    assert np.allclose(o.grad(w), fd_grad(o.loss, w, h=1e-5 * (1 + np.abs(w).max())),
                       atol=1e-4 * scale)
    H = fd_hess(o.grad, w)
    rng = np.random.default_rng(0)
    v = rng.standard_normal(2)
    assert np.allclose(o.hvp(w, v), H @ v, atol=1e-7 * max(1, np.abs(H).max()))
    u = rng.standard_normal(2)
    assert np.allclose(o.third_bilinear(w, u, v),
                       fd_third(o.hvp, w, u, v), atol=1e-6)


def test_toy_hessian_and_valley():
    o = objective.make_eos_toy(objective.EosToyParams(a=0.01, y_star=300.0))
    w = np.array([0.3, 7.0])
    H = fd_hess(o.grad, w)
    assert np.allclose(H, toy_hessian(w, 0.01), atol=1e-6)
    # valley floor: gradient vanishes at (0, y_star)
    assert np.allclose(o.grad(np.array([0.0, 300.0])), 0.0)
    # sharpness at (0, y) is y itself once y > a
    assert np.isclose(objective.sharpness(o, np.array([0.0, 50.0])), 50.0,
                      atol=1e-8)


def test_toy_extra_blocks_and_coupling():
    p = objective.EosToyParams(a=0.01, y_star=300.0,
                               extra_blocks=[(0.02, 250.0, 0.1)])
    o = objective.make_eos_toy(p)
    assert o.dim == 4
    rng = np.random.default_rng(1)
    w = rng.uniform(0.5, 5.0, 4)
    assert np.allclose(o.grad(w), fd_grad(o.loss, w, h=1e-6), atol=1e-5)
    H = fd_hess(o.grad, w)
    v = rng.standard_normal(4)
    assert np.allclose(o.hvp(w, v), H @ v, atol=1e-7)
    assert np.isclose(H[0, 2], 0.1, atol=1e-6)  # the x0-x1 coupling


def test_mlp_budget_enforced():
    with pytest.raises(ValueError, match="budget"):
        objective.make_mlp([10, 100, 100, 1])


def test_mlp_derivatives_cross_check():
    o = objective.make_mlp([2, 8, 1], dataset_size=16, seed=3)
    rng = np.random.default_rng(4)
    w = o.default_w0
    g = o.grad(w)
    g_fd = fd_grad(o.loss, w, h=1e-6)
    assert np.linalg.norm(g - g_fd) <= 1e-6 * max(1, np.linalg.norm(g))
    v = rng.standard_normal(o.dim)
    hv = o.hvp(w, v)
    hv_fd = fd_hvp(o.grad, w, v, h=1e-6)
    assert np.linalg.norm(hv - hv_fd) <= 1e-5 * max(1, np.linalg.norm(hv))
    u = rng.standard_normal(o.dim)
    t = o.third_bilinear(w, u, v)
    t_fd = fd_third(o.hvp, w, u, v, h=3e-4)
    assert np.linalg.norm(t - t_fd) <= 1e-3 * max(1, np.linalg.norm(t))


def test_mlp_third_symmetric_in_arguments():
    o = objective.make_mlp([2, 6, 1], dataset_size=8, seed=5)
    rng = np.random.default_rng(6)
    w, u, v = (rng.standard_normal(o.dim) for _ in range(3))
    t_uv = o.third_bilinear(w, u, v)
    t_vu = o.third_bilinear(w, v, u)
    scale = (1 + np.linalg.norm(w)) * np.linalg.norm(t_uv)
    assert np.linalg.norm(t_uv - t_vu) <= 1e-4 * max(scale, 1.0)


def test_mlp_deterministic_by_seed():
    a = objective.make_mlp([2, 8, 1], seed=7)
    b = objective.make_mlp([2, 8, 1], seed=7)
    assert np.array_equal(a.default_w0, b.default_w0)
    w = a.default_w0
    assert a.loss(w) == b.loss(w)
    assert np.array_equal(a.grad(w), b.grad(w))


def test_sharpness_and_gradient():
    o = objective.make_eos_toy(objective.EosToyParams(a=0.01, y_star=300.0))
    w = np.array([0.4, 30.0])
    s, u, degenerate = objective.sharpness(o, w, return_vector=True)
    ref_vals, ref_vecs = top_eig(toy_hessian(w, 0.01))
    assert np.isclose(s, ref_vals[0], atol=1e-9)
    assert not degenerate
    gs = objective.grad_sharpness(o, w)
    # FD of the top eigenvalue
    def top(wq):
        return top_eig(toy_hessian(wq, 0.01))[0][0]
    h = 1e-6
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        assert np.isclose(gs[i], (top(w + e) - top(w - e)) / (2 * h), atol=1e-6)


def test_grad_sharpness_degenerate_raises():
    o = objective.make_quadratic(np.diag([2.0, 2.0, 1.0]))
    with pytest.raises(ValueError, match="degenerate"):
        objective.grad_sharpness(o, np.zeros(3))
