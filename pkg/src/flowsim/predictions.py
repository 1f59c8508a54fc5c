"""Predicted time-averaged observables from the flow's oscillation
covariance, plus the empirical comparators (Gaussian smoothing,
second-order midpoints, whitened displacement measurement) and a
diagnostic for loss curvature that is poorly captured by a local cubic
model along the oscillation direction.
"""

from dataclasses import dataclass

import numpy as np

from .linalg import sym_eig_dense
from .objective import sharpness

DEFAULT_BANDWIDTH = 50.0


@dataclass
class OscillationModel:
    """Predicted oscillation spectrum: variances lam (descending, >= 0)
    along whitened directions V (columns, orthonormal)."""

    lam: np.ndarray
    V: np.ndarray
    X: np.ndarray
    P_diag: np.ndarray


def predicted_loss_bar(loss_flow, X):
    """Time-averaged loss prediction: flow loss plus tr X (X expressed in
    a P-orthonormal basis)."""
    if X is None:
        return float(loss_flow)
    return float(loss_flow + np.trace(np.atleast_2d(X)))


def predicted_grad_norm_sq(gradnorm_sq_flow, P_diag, U, X):
    """Time-averaged squared gradient norm: ||grad||^2 + 4 tr((PU) X (PU)^T)."""
    if X is None or U is None or U.shape[1] == 0:
        return float(gradnorm_sq_flow)
    PU = P_diag[:, None] * U
    return float(gradnorm_sq_flow + 4.0 * np.trace(PU @ np.atleast_2d(X) @ PU.T))


def oscillation_variances(P_diag, U, X):
    """Eigen-spectrum of P^1/2 Sigma P^1/2 where Sigma = U X U^T.

    Since U^T P U = I, the whitened columns P^1/2 U are orthonormal, so
    the spectrum is just the eigendecomposition of X lifted by P^1/2 U."""
    X = np.atleast_2d(X)
    pairs = sym_eig_dense(X)
    lam = np.maximum(pairs.values, 0.0)
    V = (np.sqrt(P_diag)[:, None] * U) @ pairs.vectors
    return OscillationModel(lam=lam, V=V, X=X, P_diag=np.asarray(P_diag))


def measure_whitened_displacement(w_discrete, w_flow, P_diag, V):
    """Squared whitened displacement components <v_i, P^1/2 (w_t - w(t))>^2."""
    delta = np.sqrt(P_diag) * (np.asarray(w_discrete) - np.asarray(w_flow))
    return (V.T @ delta) ** 2


def gaussian_smooth(series, bandwidth=DEFAULT_BANDWIDTH):
    """Gaussian-kernel smoothing, truncated at 4 bandwidths, renormalized
    over the available support at the edges."""
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    series = np.asarray(series, dtype=float)
    n = len(series)
    if n == 0:
        return series
    half = int(np.ceil(4.0 * bandwidth))
    offsets = np.arange(-half, half + 1)
    kernel = np.exp(-0.5 * (offsets / bandwidth) ** 2)
    out = np.empty(n)
    for t in range(n):
        lo = max(0, t - half)
        hi = min(n, t + half + 1)
        kseg = kernel[lo - t + half:hi - t + half]
        out[t] = float(np.dot(kseg, series[lo:hi]) / kseg.sum())
    return out


def second_order_midpoints(traj):
    """Interior midpoints-of-midpoints 1/4 (2 w_t + w_{t-1} + w_{t+1});
    annihilates the period-2 component of an oscillating trajectory."""
    traj = [np.asarray(w, dtype=float) for w in traj]
    if len(traj) < 3:
        raise ValueError("need at least 3 points")
    return [0.25 * (2.0 * traj[t] + traj[t - 1] + traj[t + 1])
            for t in range(1, len(traj) - 1)]


def subquadraticity_diagnostic(oracle, w_t, w_next, n_samples=21):
    """Compare the curvature u^T H(w) u along the segment between two
    iterates against its linear model around the midpoint (u = top
    Hessian eigenvector there).  Large relative deviation signals that a
    local cubic model of the loss is inadequate in the oscillation
    direction."""
    w_t = np.asarray(w_t, dtype=float)
    w_next = np.asarray(w_next, dtype=float)
    mid = 0.5 * (w_t + w_next)
    s_mid, u, _ = sharpness(oracle, mid, return_vector=True)
    grad_s = oracle.third_bilinear(mid, u, u)
    alphas = np.linspace(0.0, 1.0, n_samples)
    actual = np.empty(n_samples)
    model = np.empty(n_samples)
    for i, al in enumerate(alphas):
        w = al * w_t + (1.0 - al) * w_next
        actual[i] = float(u @ oracle.hvp(w, u))
        model[i] = s_mid + grad_s @ (w - mid)
    scale = max(np.abs(actual).max(), 1e-12)
    deviation = float(np.abs(actual - model).max() / scale)
    return {"alphas": alphas, "actual": actual, "model": model,
            "max_rel_deviation": deviation}
