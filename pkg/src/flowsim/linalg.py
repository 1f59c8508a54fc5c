"""Dense symmetric eigendecomposition (cyclic Jacobi) and a warm-started
block eigensolver (LOBPCG) for the top spectrum of implicit operators.

The Jacobi sweep kernel has a compiled backend (flowsim._jacobi, Cython)
and a pure Python fallback (flowsim._jacobi_py); whichever is importable
wins at module load.  Both implement the identical sweep.
"""

from dataclasses import dataclass, field

import numpy as np

try:
    from . import _jacobi as _kernel

    BACKEND = "compiled"
except ImportError:  # pragma: no cover - depends on build environment
    from . import _jacobi_py as _kernel

    BACKEND = "pure"

MAX_DENSE_DIM = 512
_CLUSTER_GAP = 1e-10


def backend_name():
    return BACKEND


@dataclass
class EigenPairs:
    """Eigenvalues (descending) with column eigenvectors.

    When ``metric`` (a diagonal, as a vector) is set, the vectors are
    orthonormal in that metric: V^T diag(metric) V = I.
    """

    values: np.ndarray
    vectors: np.ndarray
    metric: np.ndarray | None = None
    niter: int = 0
    converged: bool = True
    residuals: np.ndarray | None = None
    clusters: list = field(default_factory=list)


def _check_symmetric(M):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("square matrix required")
    if not np.all(np.isfinite(M)):
        raise ValueError("non-finite entries in symmetric matrix")
    if not np.allclose(M, M.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(M).max())):
        raise ValueError("matrix is not symmetric")
    return M


def _cluster_flags(values):
    """Indices grouped where adjacent eigenvalues are numerically equal."""
    clusters = []
    i = 0
    scale = max(1.0, float(np.abs(values).max()) if len(values) else 1.0)
    while i < len(values):
        j = i
        while j + 1 < len(values) and abs(values[j] - values[j + 1]) < _CLUSTER_GAP * scale:
            j += 1
        if j > i:
            clusters.append(list(range(i, j + 1)))
        i = j + 1
    return clusters


def sym_eig_dense(M):
    """Full eigendecomposition of a small dense symmetric matrix.

    Returns EigenPairs with values sorted descending.  Uses cyclic Jacobi
    sweeps; accuracy target is reconstruction to ~1e-10 * ||M||.
    """
    M = _check_symmetric(M)
    n = M.shape[0]
    if n > MAX_DENSE_DIM:
        raise ValueError(f"dense solver limited to {MAX_DENSE_DIM}, got {n}")
    A = np.ascontiguousarray(0.5 * (M + M.T))
    V = np.eye(n)
    scale = np.linalg.norm(A)
    tol_off = 1e-14 * max(scale, 1e-300)
    _kernel.jacobi_sweeps(A, V, tol_off, 60)
    vals = np.diag(A).copy()
    order = np.argsort(-vals, kind="stable")
    vals = vals[order]
    V = V[:, order]
    return EigenPairs(values=vals, vectors=V, clusters=_cluster_flags(vals))


def psd_project(M):
    """Frobenius-nearest positive semidefinite matrix to symmetric M."""
    M = np.asarray(M, dtype=float)
    if M.shape == (1, 1):  # scalar case: clamp, skip the Jacobi machinery
        if not np.isfinite(M[0, 0]):
            raise ValueError("non-finite entries in symmetric matrix")
        return np.maximum(M, 0.0)
    pairs = sym_eig_dense(M)
    lam = np.maximum(pairs.values, 0.0)
    if np.all(lam == pairs.values):
        return 0.5 * (M + M.T)
    return (pairs.vectors * lam) @ pairs.vectors.T


def _orthonormalize(B, drop_tol=1e-12):
    """Orthonormalize columns of B, dropping near-dependent directions."""
    q, r = np.linalg.qr(B)
    keep = np.abs(np.diag(r)) > drop_tol * max(1.0, np.abs(np.diag(r)).max())
    return q[:, keep]


def _apply_columns(apply, B):
    out = np.empty_like(B)
    for j in range(B.shape[1]):
        out[:, j] = apply(B[:, j])
    return out


def _fix_signs(vectors, warm=None):
    V = vectors.copy()
    for j in range(V.shape[1]):
        if warm is not None and j < warm.shape[1]:
            if np.dot(V[:, j], warm[:, j]) < 0.0:
                V[:, j] = -V[:, j]
        else:
            i = int(np.argmax(np.abs(V[:, j])))
            if V[i, j] < 0.0:
                V[:, j] = -V[:, j]
    return V


def _symmetry_probe(apply, d, rng, tol):
    u = rng.standard_normal(d)
    v = rng.standard_normal(d)
    au = apply(u)
    av = apply(v)
    scale = max(np.linalg.norm(au) * np.linalg.norm(v), np.linalg.norm(av) * np.linalg.norm(u), 1e-300)
    asym = abs(np.dot(u, av) - np.dot(au, v)) / scale
    if asym > max(tol, 1e-8):
        raise ValueError(f"operator failed symmetry probe (rel asymmetry {asym:.3e})")


def lobpcg_topk(apply, d, k, warm=None, tol=1e-10, max_iters=500, seed=0):
    """Top-k (algebraically largest) eigenpairs of a symmetric operator.

    apply: v -> A v closure; warm: optional d x k starting eigenvector
    guesses.  Block size is k + 2 guard vectors; converged pairs are
    soft-locked (kept in the block, excluded from the residual search
    directions).  Small operators fall back to the dense solver.
    Eigenvector signs are aligned to the warm start when given.
    """
    if k < 1 or k > d:
        raise ValueError("need 1 <= k <= d")
    rng = np.random.default_rng(seed)
    m = min(k + 2, d)
    if m >= d or d <= 8:
        # block would span (nearly) the whole space: dense is exact and cheaper
        M = _apply_columns(apply, np.eye(d))
        pairs = sym_eig_dense(0.5 * (M + M.T))
        vecs = _fix_signs(pairs.vectors[:, :k], warm)
        vals = pairs.values[:k]
        res = np.zeros(k)
        return EigenPairs(values=vals, vectors=vecs, niter=0, converged=True,
                          residuals=res, clusters=_cluster_flags(vals))

    _symmetry_probe(apply, d, rng, tol)

    X = rng.standard_normal((d, m))
    if warm is not None:
        warm = np.asarray(warm, dtype=float)
        X[:, : warm.shape[1]] = warm
    X = _orthonormalize(X)
    AX = _apply_columns(apply, X)
    # initial Rayleigh-Ritz within the block
    T = X.T @ AX
    tp = sym_eig_dense(0.5 * (T + T.T))
    X = X @ tp.vectors
    AX = AX @ tp.vectors
    theta = tp.values
    P = None
    niter = 0
    converged = False
    for niter in range(1, max_iters + 1):
        R = AX - X * theta
        resnorm = np.linalg.norm(R, axis=0)
        thresh = tol * np.maximum(np.abs(theta), 1e-12)
        active = resnorm > thresh
        if not np.any(active[:k]):
            converged = True
            break
        blocks = [X, R[:, active]]
        if P is not None:
            blocks.append(P)
        S = _orthonormalize(np.hstack(blocks))
        AS = _apply_columns(apply, S)
        T = S.T @ AS
        tp = sym_eig_dense(0.5 * (T + T.T))
        W = tp.vectors[:, :m]
        theta = tp.values[:m]
        AX = AS @ W
        # classical conjugate-direction update: the part of the new Ritz
        # vectors that lives outside the previous X block
        W_tail = W[m:, :]
        P = S[:, m:] @ W_tail
        pn = np.linalg.norm(P, axis=0)
        P = _orthonormalize(P[:, pn > 1e-8]) if np.any(pn > 1e-8) else None
        X = S @ W

    R = AX - X * theta
    resnorm = np.linalg.norm(R, axis=0)
    vals = theta[:k]
    vecs = _fix_signs(X[:, :k], warm)
    return EigenPairs(values=vals, vectors=vecs, niter=niter,
                      converged=converged, residuals=resnorm[:k],
                      clusters=_cluster_flags(vals))
