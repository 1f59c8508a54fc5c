"""Discrete steppers in the adaptive-preconditioned template
w_{t+1} = w_t - P(nu_t)^{-1} grad L(w_t), with the per-method derivative
contractions the flow integrator needs (dP/dnu and d^2G/dg^2 against a
tracked eigenbasis).

Methods: plain gradient descent (constant scalar preconditioner), a
scalar adaptive method driven by the squared gradient norm, and the
diagonal adaptive method driven by the elementwise squared gradient.
"""

from dataclasses import dataclass, field

import numpy as np

from .linalg import lobpcg_topk

DIVERGENCE_LIMIT = 1e12
DEFAULT_TAU = 0.05
DEFAULT_TRACK_THRESH = 1.5


@dataclass
class OptimizerState:
    nu: np.ndarray  # shape (d_nu,); empty for GD
    t: int = 0


@dataclass
class CriticalBasis:
    """Tracked top eigenpairs of the effective Hessian P^-1 H.

    U columns are orthonormal w.r.t. P (U^T P U = I); D holds the
    effective-Hessian eigenvalues, descending.  U_tilde keeps the
    plain-orthonormal eigenvectors of P^-1/2 H P^-1/2 for warm starts.
    """

    U: np.ndarray
    D: np.ndarray
    k_unstable: int
    tracked: int
    U_tilde: np.ndarray
    clusters: list = field(default_factory=list)


class MethodSpec:
    def __init__(self, name, eta, beta2=None, eps_adam=0.0, bias_correction=False):
        if eta <= 0:
            raise ValueError("eta must be positive")
        if beta2 is not None and not (0.0 <= beta2 < 1.0):
            raise ValueError("beta2 must be in [0, 1)")
        if eps_adam < 0:
            raise ValueError("eps_adam must be nonnegative")
        self.name = name
        self.eta = float(eta)
        self.beta2 = None if beta2 is None else float(beta2)
        self.eps_adam = float(eps_adam)
        self.bias_correction = bool(bias_correction)

    @property
    def gamma(self):
        """Continuous-time EMA rate matching the discrete lag (inf at beta2=0)."""
        if self.beta2 is None:
            return 0.0
        if self.beta2 == 0.0:
            return np.inf
        return (1.0 - self.beta2) / self.beta2

    # --- state ---------------------------------------------------------
    def state_dim(self, d):
        return {"gd": 0, "scalar_rmsprop": 1, "rmsprop": d}[self.name]

    def init_state(self, d):
        return OptimizerState(nu=np.zeros(self.state_dim(d)), t=0)

    def grad_stat(self, g):
        """The squared-gradient statistic the EMA tracks."""
        if self.name == "scalar_rmsprop":
            return np.array([g @ g])
        if self.name == "rmsprop":
            return g * g
        return np.zeros(0)

    def G_discrete(self, nu, g):
        return (1.0 - self.beta2) * (self.grad_stat(g) - nu)

    def G_flow(self, nu, g):
        """gamma * (statistic - nu); caller handles beta2 = 0 separately."""
        return self.gamma * (self.grad_stat(g) - nu)

    def nu_hat(self, state):
        if not self.bias_correction or self.name == "gd":
            return state.nu
        corr = 1.0 - self.beta2 ** max(state.t, 1)
        return state.nu / corr

    # --- preconditioner ------------------------------------------------
    def P_diag(self, state, d):
        """Diagonal of P(nu) as a length-d vector."""
        if self.name == "gd":
            return np.full(d, 1.0 / self.eta)
        nu = self.nu_hat(state)
        if self.name == "scalar_rmsprop":
            return np.full(d, (np.sqrt(nu[0]) + self.eps_adam) / self.eta)
        return (np.sqrt(nu) + self.eps_adam) / self.eta

    def grad_P_U(self, state, U):
        """dP_U/dnu as an array of shape (d_nu, k, k)."""
        k = U.shape[1]
        if self.name == "gd":
            return np.zeros((0, k, k))
        nu = self.nu_hat(state)
        if self.name == "scalar_rmsprop":
            coef = 1.0 / (2.0 * self.eta * np.sqrt(nu[0]))
            return (coef * (U.T @ U))[None, :, :]
        coef = 1.0 / (2.0 * self.eta * np.sqrt(nu))  # (d,)
        return coef[:, None, None] * (U[:, :, None] * U[:, None, :])

    def G2_PU(self, state, U, with_gamma=True):
        """Hessian of the state update w.r.t. the gradient, contracted
        against P-scaled basis vectors: entries 2*gamma*(Pu_i)_q (Pu_j)_q
        (summed over q for the scalar method).  Shape (d_nu, k, k)."""
        k = U.shape[1]
        if self.name == "gd":
            return np.zeros((0, k, k))
        d = U.shape[0]
        PU = self.P_diag(state, d)[:, None] * U
        fac = 2.0 * (self.gamma if with_gamma else 1.0)
        if self.name == "scalar_rmsprop":
            return (fac * (PU.T @ PU))[None, :, :]
        return fac * (PU[:, :, None] * PU[:, None, :])


def make_gd(eta):
    return MethodSpec("gd", eta)


def make_scalar_rmsprop(eta, beta2, bias_correction=False):
    if beta2 is None:
        raise ValueError("beta2 required")
    return MethodSpec("scalar_rmsprop", eta, beta2, 0.0, bias_correction)


def make_rmsprop(eta, beta2, eps_adam=1e-8, bias_correction=False):
    if beta2 is None:
        raise ValueError("beta2 required")
    return MethodSpec("rmsprop", eta, beta2, eps_adam, bias_correction)


class DivergenceError(RuntimeError):
    pass


def step_discrete(m, w, state, oracle):
    """One discrete update: state first (nu_t from g_t), then the step."""
    g = oracle.grad(w)
    t_new = state.t + 1
    if m.name == "gd":
        state_new = OptimizerState(nu=state.nu, t=t_new)
    else:
        nu_new = state.nu + m.G_discrete(state.nu, g)
        state_new = OptimizerState(nu=nu_new, t=t_new)
    w_new = w - (1.0 / m.P_diag(state_new, oracle.dim)) * g
    if not np.all(np.isfinite(w_new)) or np.linalg.norm(w_new) > DIVERGENCE_LIMIT:
        raise DivergenceError(f"divergence at step {t_new}")
    return w_new, state_new


def effective_hessian_apply(m, w, state, oracle):
    """Closure for the symmetric operator P^-1/2 H P^-1/2."""
    pinv_sqrt = 1.0 / np.sqrt(m.P_diag(state, oracle.dim))

    def apply(v):
        return pinv_sqrt * oracle.hvp(w, pinv_sqrt * v)

    return apply


def critical_basis(m, w, state, oracle, tau=DEFAULT_TAU,
                   track_thresh=DEFAULT_TRACK_THRESH, warm=None, max_k=8):
    """Eigenpairs of the effective Hessian above 2 - tau (the unstable set)
    and the count above the tracking threshold."""
    d = oracle.dim
    apply = effective_hessian_apply(m, w, state, oracle)
    n_ask = warm.shape[1] + 1 if warm is not None else 2
    n_ask = min(max(n_ask, 2), max_k, d)
    while True:
        pairs = lobpcg_topk(apply, d, n_ask, warm=warm, tol=1e-11)
        if pairs.values[-1] <= track_thresh or n_ask >= min(max_k, d):
            break
        n_ask = min(n_ask + 2, max_k, d)
    D = pairs.values
    k_unstable = int(np.sum(D > 2.0 - tau))
    # never split a numerically degenerate cluster at the boundary
    for cluster in pairs.clusters:
        if any(i < k_unstable for i in cluster):
            k_unstable = max(k_unstable, max(cluster) + 1)
    tracked = int(np.sum(D > track_thresh))
    pinv_sqrt = 1.0 / np.sqrt(m.P_diag(state, d))
    ku = max(k_unstable, 1)
    U = pinv_sqrt[:, None] * pairs.vectors[:, :ku]
    return CriticalBasis(U=U[:, :k_unstable], D=D, k_unstable=k_unstable,
                         tracked=tracked, U_tilde=pairs.vectors,
                         clusters=pairs.clusters)


def effective_sharpness(m, w, state, oracle):
    basis = critical_basis(m, w, state, oracle)
    return float(basis.D[0])
