"""Pure Python/numpy fallback for the cyclic Jacobi kernel.

Same sweep order and rotation formulas as _jacobi.pyx; row/column updates
are vectorized with numpy so the fallback stays usable at n ~ a few hundred.
"""

import math

import numpy as np


def jacobi_sweeps(A, V, tol_off, max_sweeps):
    """Run cyclic Jacobi sweeps on symmetric A (in place), accumulating V.

    Stops when the off-diagonal Frobenius norm drops below tol_off.
    Returns the number of sweeps performed.
    """
    n = A.shape[0]
    for sweep in range(max_sweeps):
        off = math.sqrt(2.0) * np.linalg.norm(A[np.triu_indices(n, k=1)])
        if off <= tol_off:
            return sweep
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if abs(theta) > 1e15:
                    t = 1.0 / (2.0 * theta)
                elif theta >= 0.0:
                    t = 1.0 / (theta + math.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_p = A[:, p].copy()
                col_q = A[:, q].copy()
                A[:, p] = c * col_p - s * col_q
                A[:, q] = s * col_p + c * col_q
                row_p = A[p, :].copy()
                row_q = A[q, :].copy()
                A[p, :] = c * row_p - s * row_q
                A[q, :] = s * row_p + c * row_q
                A[p, q] = 0.0
                A[q, p] = 0.0
                v_p = V[:, p].copy()
                v_q = V[:, q].copy()
                V[:, p] = c * v_p - s * v_q
                V[:, q] = s * v_p + c * v_q
    return max_sweeps
