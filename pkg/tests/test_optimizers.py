import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowsim import optimizers as opt
from flowsim.objective import EosToyParams, make_eos_toy, make_quadratic
from oracles import discrete_ema


def test_method_validation():
    with pytest.raises(ValueError):
        opt.make_gd(0.0)
    with pytest.raises(ValueError):
        opt.make_scalar_rmsprop(0.1, 1.0)
    with pytest.raises(ValueError):
        opt.make_rmsprop(0.1, 0.9, eps_adam=-1.0)


def test_gamma_values():
    assert opt.make_gd(0.1).gamma == 0.0
    assert np.isclose(opt.make_rmsprop(0.1, 0.99).gamma, (1 - 0.99) / 0.99)
    assert opt.make_scalar_rmsprop(0.1, 0.0).gamma == np.inf


def test_gd_on_quadratic_closed_form():
    lam = np.array([1.0, 3.0])
    o = make_quadratic(lam)
    m = opt.make_gd(0.1)
    w = np.array([1.0, 1.0])
    state = m.init_state(2)
    for t in range(1, 30):
        w, state = opt.step_discrete(m, w, state, o)
        assert np.allclose(w, (1 - 0.1 * lam) ** t, atol=1e-14)


def test_ema_recursion_matches_reference():
    o = make_quadratic(np.diag([1.0, 2.0]), b=np.array([0.3, -0.4]))
    m = opt.make_rmsprop(0.05, 0.9)
    w = np.array([1.0, -1.0])
    state = m.init_state(2)
    stats = []
    for _ in range(12):
        stats.append(m.grad_stat(o.grad(w)))
        w, state = opt.step_discrete(m, w, state, o)
    ref0 = discrete_ema([s[0] for s in stats], 0.9)
    assert np.isclose(state.nu[0], ref0[-1], atol=1e-14)


def test_bias_correction_first_step_identity():
    # with bias correction, nu_hat after one step equals the raw statistic
    o = make_quadratic(np.diag([1.0, 2.0]), b=np.array([1.0, 1.0]))
    m = opt.make_rmsprop(0.05, 0.99, bias_correction=True)
    w = np.array([2.0, -3.0])
    g1 = o.grad(w)
    _, state = opt.step_discrete(m, w, m.init_state(2), o)
    assert np.allclose(m.nu_hat(state), g1 * g1, atol=1e-15)


def test_beta2_zero_is_instantaneous():
    o = make_quadratic(np.diag([1.0, 2.0]), b=np.array([1.0, 1.0]))
    m = opt.make_rmsprop(0.05, 0.0)
    w = np.array([2.0, -3.0])
    state = m.init_state(2)
    for _ in range(3):
        g = o.grad(w)
        w, state = opt.step_discrete(m, w, state, o)
        assert np.array_equal(state.nu, g * g)


def test_p_diag_shapes_and_values():
    m = opt.make_scalar_rmsprop(0.5, 0.9)
    st_ = opt.OptimizerState(nu=np.array([4.0]))
    assert np.allclose(m.P_diag(st_, 3), np.full(3, 2.0 / 0.5))
    mg = opt.make_gd(0.25)
    assert np.allclose(mg.P_diag(mg.init_state(2), 2), 4.0)
    mr = opt.make_rmsprop(1.0, 0.9, eps_adam=0.0)
    st2 = opt.OptimizerState(nu=np.array([4.0, 9.0]))
    assert np.allclose(mr.P_diag(st2, 2), [2.0, 3.0])


def test_divergence_detected():
    o = make_quadratic(np.array([30.0]))
    m = opt.make_gd(0.1)  # eta*lam = 3 > 2: divergent
    w = np.array([1.0])
    state = m.init_state(1)
    with pytest.raises(opt.DivergenceError):
        for _ in range(200):
            w, state = opt.step_discrete(m, w, state, o)


@settings(deadline=None, max_examples=20)
@given(st.floats(0.1, 10.0), st.integers(0, 100))
def test_grad_P_U_matches_fd(nu0, seed):
    # FD of U^T P(nu) U in nu against the analytic contraction
    m = opt.make_rmsprop(0.3, 0.9)
    rng = np.random.default_rng(seed)
    d, k = 5, 2
    U = rng.standard_normal((d, k))
    nu = nu0 * rng.uniform(0.5, 2.0, d)
    state = opt.OptimizerState(nu=nu)
    dP = m.grad_P_U(state, U)
    h = 1e-6
    for q in range(d):
        e = np.zeros(d)
        e[q] = h
        Pp = np.diag(m.P_diag(opt.OptimizerState(nu=nu + e), d))
        Pm = np.diag(m.P_diag(opt.OptimizerState(nu=nu - e), d))
        fd = U.T @ ((Pp - Pm) / (2 * h)) @ U
        assert np.allclose(dP[q], fd, atol=1e-5 * max(1, np.abs(fd).max()))


def test_G2_PU_matches_fd():
    # d^2(nu update)/dg^2 contracted against P-scaled basis vectors
    m = opt.make_rmsprop(0.3, 0.9)
    d, k = 4, 2
    rng = np.random.default_rng(2)
    nu = rng.uniform(0.5, 2.0, d)
    state = opt.OptimizerState(nu=nu)
    U = rng.standard_normal((d, k))
    PU = m.P_diag(state, d)[:, None] * U
    G2 = m.G2_PU(state, U)
    g0 = rng.standard_normal(d)
    h = 1e-4
    for q in range(d):
        for i in range(k):
            for j in range(k):
                f = lambda g: m.G_flow(nu, g)[q]
                val = (f(g0 + h * (PU[:, i] + PU[:, j]))
                       - f(g0 + h * PU[:, i]) - f(g0 + h * PU[:, j])
                       + f(g0)) / h ** 2
                assert np.isclose(G2[q, i, j], val, atol=1e-5)


class TestCriticalBasis:
    def _setup(self, y1=210.0, y2=201.0):
        p = EosToyParams(a=0.01, y_star=300.0, extra_blocks=[(0.02, 250.0, 0.0)])
        o = make_eos_toy(p)
        w = np.array([0.0, y1, 0.0, y2])
        m = opt.make_gd(0.01)
        return m, w, o

    def test_p_orthonormal_and_counts(self):
        m, w, o = self._setup()
        basis = opt.critical_basis(m, w, m.init_state(4), o)
        P = np.diag(m.P_diag(m.init_state(4), 4))
        k = basis.k_unstable
        assert k == 2  # eta*y = 2.10 and 2.01, both above 2 - tau
        assert np.allclose(basis.U.T @ P @ basis.U, np.eye(k), atol=1e-9)
        assert np.all(np.diff(basis.D) <= 1e-12)

    def test_effective_sharpness_gd_is_eta_s(self):
        m, w, o = self._setup()
        assert np.isclose(opt.effective_sharpness(m, w, m.init_state(4), o),
                          0.01 * 210.0, atol=1e-9)

    def test_cluster_never_split(self):
        # two exactly equal eigenvalues straddling nothing: both in or out
        m, w, o = self._setup(y1=195.5, y2=195.5)
        basis = opt.critical_basis(m, w, m.init_state(4), o)
        assert basis.k_unstable in (0, 2)

    def test_stable_point_has_no_unstable_modes(self):
        m, w, o = self._setup(y1=100.0, y2=90.0)
        basis = opt.critical_basis(m, w, m.init_state(4), o)
        assert basis.k_unstable == 0
