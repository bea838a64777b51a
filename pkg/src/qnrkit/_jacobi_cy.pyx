# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled cyclic Jacobi sweeps (hot kernel of the PSD projections)."""

from libc.math cimport fabs, sqrt, copysign

import numpy as np

BACKEND = "cython"


def jacobi_sweeps(double[:, ::1] A, double[:, ::1] V, double rel_tol, int max_sweeps):
    """Cyclic Jacobi on symmetric A (in place), rotations accumulated in V.

    Same contract as the pure-Python fallback in ``_jacobi_py``.
    """
    cdef int n = A.shape[0]
    cdef int sweep, p, q, k
    cdef double norm_a, stop, off, thresh, apq, app, aqq
    cdef double theta, t, c, s, tp, tq

    if n < 2:
        return 0
    norm_a = 0.0
    for p in range(n):
        for q in range(n):
            norm_a += A[p, q] * A[p, q]
    norm_a = sqrt(norm_a)
    if norm_a == 0.0:
        return 0
    stop = rel_tol * norm_a

    for sweep in range(max_sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                off += 2.0 * A[p, q] * A[p, q]
        off = sqrt(off)
        if off <= stop:
            return sweep
        thresh = off / (n * n) if sweep < 3 else 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if fabs(apq) <= thresh:
                    continue
                app = A[p, p]
                aqq = A[q, q]
                if fabs(apq) <= 1e-300 or fabs(apq) <= 1e-18 * (fabs(app) + fabs(aqq)):
                    continue
                theta = 0.5 * (aqq - app) / apq
                t = copysign(1.0, theta) / (fabs(theta) + sqrt(theta * theta + 1.0))
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    tp = A[p, k]
                    tq = A[q, k]
                    A[p, k] = c * tp - s * tq
                    A[q, k] = s * tp + c * tq
                for k in range(n):
                    tp = A[k, p]
                    tq = A[k, q]
                    A[k, p] = c * tp - s * tq
                    A[k, q] = s * tp + c * tq
                A[p, q] = 0.0
                A[q, p] = 0.0
                for k in range(n):
                    tp = V[k, p]
                    tq = V[k, q]
                    V[k, p] = c * tp - s * tq
                    V[k, q] = s * tp + c * tq
    off = 0.0
    for p in range(n - 1):
        for q in range(p + 1, n):
            off += 2.0 * A[p, q] * A[p, q]
    off = sqrt(off)
    return max_sweeps if off <= stop else -1
