# cython: boundscheck=False, wraparound=False, cdivision=True
"""Cyclic Jacobi eigendecomposition kernel (compiled hot loop).

Rotates A in place to (near-)diagonal form while accumulating the
eigenvectors in V.  Same sweep order and rotation formulas as the pure
Python fallback in _jacobi_py.py.
"""

from libc.math cimport fabs, sqrt


def jacobi_sweeps(double[:, ::1] A, double[:, ::1] V, double tol_off, int max_sweeps):
    """Run cyclic Jacobi sweeps on symmetric A (in place), accumulating V.

    Stops when the off-diagonal Frobenius norm drops below tol_off.
    Returns the number of sweeps performed.
    """
    cdef Py_ssize_t n = A.shape[0]
    cdef Py_ssize_t p, q, i
    cdef int sweep
    cdef double apq, theta, t, c, s, off, aip, aiq, vip, viq

    for sweep in range(max_sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                off += A[p, q] * A[p, q]
        off = sqrt(2.0 * off)
        if off <= tol_off:
            return sweep
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if fabs(apq) < 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if fabs(theta) > 1e15:
                    t = 1.0 / (2.0 * theta)
                elif theta >= 0.0:
                    t = 1.0 / (theta + sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + sqrt(theta * theta + 1.0))
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                # A <- J^T A J ; apply J on the right (columns) ...
                for i in range(n):
                    aip = A[i, p]
                    aiq = A[i, q]
                    A[i, p] = c * aip - s * aiq
                    A[i, q] = s * aip + c * aiq
                # ... then J^T on the left (rows)
                for i in range(n):
                    aip = A[p, i]
                    aiq = A[q, i]
                    A[p, i] = c * aip - s * aiq
                    A[q, i] = s * aip + c * aiq
                # force exact symmetry on the annihilated pair
                A[p, q] = 0.0
                A[q, p] = 0.0
                for i in range(n):
                    vip = V[i, p]
                    viq = V[i, q]
                    V[i, p] = c * vip - s * viq
                    V[i, q] = s * vip + c * viq
    return max_sweeps
