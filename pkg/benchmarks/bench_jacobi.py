"""Benchmark the compiled Jacobi sweep kernel against the pure-numpy
fallback, and sanity-check that both produce the same decomposition.

Run:  python3 benchmarks/bench_jacobi.py [--sizes 32,64,128,256] [--reps 3]
"""

import argparse
import time

import numpy as np

from flowsim import _jacobi_py
from flowsim import linalg

try:
    from flowsim import _jacobi

    HAVE_COMPILED = True
except ImportError:
    _jacobi = None
    HAVE_COMPILED = False


def run_kernel(kernel, A, tol_off=1e-12, max_sweeps=40):
    work = A.copy()
    V = np.eye(A.shape[0])
    sweeps = kernel.jacobi_sweeps(work, V, tol_off * np.linalg.norm(A),
                                  max_sweeps)
    return work, V, sweeps


def bench(kernel, A, reps):
    best = np.inf
    for _ in range(reps):
        t0 = time.perf_counter()
        run_kernel(kernel, A)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="32,64,128,256")
    ap.add_argument("--reps", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]
    rng = np.random.default_rng(args.seed)

    print(f"active backend in flowsim.linalg: {linalg.backend_name()}")
    if not HAVE_COMPILED:
        print("compiled kernel not importable; benchmarking fallback only")
    print(f"{'n':>6} {'pure (s)':>10} {'compiled (s)':>13} {'speedup':>8}")
    for n in sizes:
        M = rng.standard_normal((n, n))
        A = (M + M.T) / 2

        t_pure = bench(_jacobi_py, A, args.reps)
        if HAVE_COMPILED:
            t_comp = bench(_jacobi, A, args.reps)
            Dp, Vp, _ = run_kernel(_jacobi_py, A)
            Dc, Vc, _ = run_kernel(_jacobi, A)
            dev = max(np.abs(np.sort(np.diag(Dp)) - np.sort(np.diag(Dc))).max(),
                      np.abs(Vp @ np.diag(np.diag(Dp)) @ Vp.T
                             - Vc @ np.diag(np.diag(Dc)) @ Vc.T).max())
            if dev > 1e-9 * max(1.0, np.abs(A).max()):
                raise SystemExit(f"backend disagreement at n={n}: {dev:.2e}")
            print(f"{n:>6} {t_pure:>10.4f} {t_comp:>13.4f} "
                  f"{t_pure / t_comp:>7.1f}x")
        else:
            print(f"{n:>6} {t_pure:>10.4f} {'-':>13} {'-':>8}")


if __name__ == "__main__":
    main()
