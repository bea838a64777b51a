"""Timing comparison between the compiled kernels and the pure numpy fallbacks.

Two hot paths have swappable backends: the cyclic Jacobi eigensolver sweeps
and the dense tableau updates (pivoting and cut-row elimination).  The
package picks the compiled versions at import when available; setting
QNRKIT_FORCE_PURE=1 forces the fallbacks.  This script times both directly.

Usage: python benchmarks/compare_backends.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from qnrkit import _jacobi_py, _tableau_py

try:
    from qnrkit import _jacobi_cy, _tableau_cy
except ImportError:
    _jacobi_cy = _tableau_cy = None


def _time(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_jacobi(mod, n, repeats, seed=3):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(n, n))
    A0 = (B + B.T) / 2

    def run():
        A = A0.copy()
        V = np.eye(n)
        mod.jacobi_sweeps(A, V, 1e-12, 100)

    return _time(run, repeats)


def bench_tableau(mod, rows, cols, pivots, repeats, seed=5):
    rng = np.random.default_rng(seed)
    T0 = rng.normal(size=(rows + 1, cols))
    # keep candidate pivots away from zero
    # distinct columns: pivoting zeroes the column elsewhere, so reusing one
    # would divide by zero on the second visit
    idx = (rng.integers(0, rows, size=pivots),
           rng.permutation(cols - 1)[:pivots])
    T0[idx] += np.sign(T0[idx]) + (T0[idx] == 0)

    def run():
        T = T0.copy()
        for r, c in zip(*idx):
            mod.pivot_update(T, int(r), int(c), rows, cols - 1)

    return _time(run, repeats)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    if _jacobi_cy is None:
        print("compiled kernels unavailable; timing pure backend only")

    print(f"{'kernel':<28} {'pure (s)':>10} {'cython (s)':>11} {'speedup':>8}")
    cases = [
        ("jacobi n=30", lambda m: bench_jacobi(m, 30, args.repeats)),
        ("jacobi n=80", lambda m: bench_jacobi(m, 80, args.repeats)),
        ("tableau 200x400, 300 piv", lambda m: bench_tableau(m, 200, 400, 300, args.repeats)),
        ("tableau 600x1200, 300 piv", lambda m: bench_tableau(m, 600, 1200, 300, args.repeats)),
    ]
    for name, fn in cases:
        mods = {"jacobi": (_jacobi_py, _jacobi_cy), "tableau": (_tableau_py, _tableau_cy)}
        pure_mod, cy_mod = mods[name.split()[0]]
        tp = fn(pure_mod)
        if cy_mod is None:
            print(f"{name:<28} {tp:>10.4f} {'-':>11} {'-':>8}")
            continue
        tc = fn(cy_mod)
        print(f"{name:<28} {tp:>10.4f} {tc:>11.4f} {tp / tc:>7.1f}x")


if __name__ == "__main__":
    main()
