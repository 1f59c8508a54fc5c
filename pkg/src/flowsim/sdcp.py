"""Semidefinite complementarity problems over Sym(R^k).

Solves 0 <= X  _|_  alpha + beta[X] >= 0 (orderings in the PSD cone) by
minimizing the convex quadratic <alpha, X> + 1/2 beta[X, X] over the PSD
cone with an accelerated projected-gradient method, and certifies the
result through KKT residuals.

The 4-index operator beta is stored as a matrix acting on the scaled
symmetric vectorization (sqrt(2) on off-diagonal coordinates), so beta's
matrix form is symmetric exactly when beta is self-adjoint.
"""

from dataclasses import dataclass

import numpy as np

from .linalg import psd_project, sym_eig_dense

MAX_K = 16
DEFAULT_TOL = 1e-10
MAX_ITERS = 50_000
_REG_SCALE = 1e-12
_ASYM_REJECT = 1e-6

_SQRT2 = np.sqrt(2.0)


def svec_indices(k):
    """Row/column index pairs (i <= j) ordering the symmetric vectorization."""
    return [(i, j) for i in range(k) for j in range(i, k)]


def svec(M):
    """Scaled symmetric vectorization: diagonal as-is, off-diagonal * sqrt(2)."""
    M = np.asarray(M, dtype=float)
    k = M.shape[0]
    out = np.empty(k * (k + 1) // 2)
    for idx, (i, j) in enumerate(svec_indices(k)):
        out[idx] = M[i, i] if i == j else _SQRT2 * M[i, j]
    return out


def smat(v, k):
    """Inverse of svec."""
    M = np.zeros((k, k))
    for idx, (i, j) in enumerate(svec_indices(k)):
        if i == j:
            M[i, i] = v[idx]
        else:
            M[i, j] = M[j, i] = v[idx] / _SQRT2
    return M


def beta_matrix_from_tensor(T):
    """Operator matrix (svec basis) of a 4-index tensor T[i,j,k,l] on Sym."""
    T = np.asarray(T, dtype=float)
    k = T.shape[0]
    pairs = svec_indices(k)
    m = len(pairs)
    B = np.empty((m, m))
    for a, (i, j) in enumerate(pairs):
        E = np.zeros((k, k))
        E[i, j] = E[j, i] = 1.0 if i == j else 0.5 * _SQRT2
        out = np.einsum("ijkl,kl->ij", T, E)
        B[:, a] = svec(0.5 * (out + out.T))
    return B


@dataclass
class SdcpProblem:
    """alpha (k x k symmetric) and beta as an operator matrix on svec(Sym)."""

    alpha: np.ndarray
    beta_mat: np.ndarray
    k: int
    asymmetry: float = 0.0
    regularized: bool = False

    @classmethod
    def build(cls, alpha, beta_mat):
        alpha = np.asarray(alpha, dtype=float)
        if alpha.ndim == 0:
            alpha = alpha.reshape(1, 1)
        k = alpha.shape[0]
        if k > MAX_K:
            raise ValueError(f"k <= {MAX_K} required, got {k}")
        alpha = 0.5 * (alpha + alpha.T)
        beta_mat = np.asarray(beta_mat, dtype=float)
        if beta_mat.ndim == 0:
            beta_mat = beta_mat.reshape(1, 1)
        scale = max(np.abs(beta_mat).max(), 1e-300)
        asym = np.abs(beta_mat - beta_mat.T).max() / scale
        if asym > _ASYM_REJECT:
            raise ValueError(f"beta operator asymmetry {asym:.3e} exceeds {_ASYM_REJECT}")
        beta_mat = 0.5 * (beta_mat + beta_mat.T)
        regularized = False
        ev = sym_eig_dense(beta_mat).values
        tr_scale = max(np.trace(beta_mat) / beta_mat.shape[0], 0.0)
        floor = _REG_SCALE * max(tr_scale, 1.0)
        if ev[-1] < floor:
            beta_mat = beta_mat + (floor - ev[-1]) * np.eye(beta_mat.shape[0])
            regularized = True
        return cls(alpha=alpha, beta_mat=beta_mat, k=k,
                   asymmetry=asym, regularized=regularized)

    def beta_apply(self, X):
        return smat(self.beta_mat @ svec(X), self.k)


@dataclass
class SdcpSolution:
    X: np.ndarray
    residual_psd: float
    residual_dual: float
    residual_comp: float
    objective: float
    iterations: int
    converged: bool


def solve_sdcp_1d(alpha, beta):
    """Closed-form scalar solution max(-alpha/beta, 0)."""
    if beta <= 0.0:
        raise ValueError("beta must be positive")
    return max(-alpha / beta, 0.0)


def kkt_residuals(p, X):
    """(primal PSD, dual PSD, complementarity) residuals of a candidate X."""
    X = np.asarray(X, dtype=float)
    Y = p.alpha + p.beta_apply(X)
    lam_x = sym_eig_dense(X).values[-1] if p.k > 1 else X[0, 0]
    lam_y = sym_eig_dense(Y).values[-1] if p.k > 1 else Y[0, 0]
    r_psd = abs(min(0.0, lam_x))
    r_dual = abs(min(0.0, lam_y))
    r_comp = abs(float(np.sum(X * Y)))
    return r_psd, r_dual, r_comp


def solve_sdcp(p, tol=DEFAULT_TOL, max_iters=MAX_ITERS, x0=None):
    """Accelerated projected gradient (with restarts) on the convex program.

    Step size 1/lambda_max(beta); stops when all three KKT residuals are
    below tol (scaled by the problem magnitude).
    """
    k = p.k
    av = svec(p.alpha)
    B = p.beta_mat
    lam_max = sym_eig_dense(B).values[0]
    step = 1.0 / max(lam_max, 1e-300)
    scale = max(np.linalg.norm(av), lam_max, 1.0)

    def obj(xv):
        return float(av @ xv + 0.5 * xv @ (B @ xv))

    def proj(xv):
        return svec(psd_project(smat(xv, k)))

    x = svec(np.asarray(x0, dtype=float)) if x0 is not None else np.zeros_like(av)
    x = proj(x)
    z = x.copy()
    t_m = 1.0
    f_prev = obj(x)
    check_every = 10
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        grad = av + B @ z
        x_new = proj(z - step * grad)
        f_new = obj(x_new)
        if f_new > f_prev + 1e-18 * (1.0 + abs(f_prev)):
            # restart momentum from the last good iterate
            z = x.copy()
            t_m = 1.0
            grad = av + B @ z
            x_new = proj(z - step * grad)
            f_new = obj(x_new)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_m * t_m))
        z = x_new + ((t_m - 1.0) / t_new) * (x_new - x)
        x, t_m, f_prev = x_new, t_new, f_new
        if it % check_every == 0 or it == max_iters:
            X = smat(x, k)
            r = kkt_residuals(p, X)
            if max(r) <= tol * scale:
                converged = True
                break
    X = smat(x, k)
    # clean tiny negative eigenvalues so downstream PSD assumptions hold
    X = psd_project(X)
    r_psd, r_dual, r_comp = kkt_residuals(p, X)
    return SdcpSolution(X=X, residual_psd=r_psd, residual_dual=r_dual,
                        residual_comp=r_comp, objective=obj(svec(X)),
                        iterations=it, converged=converged)
