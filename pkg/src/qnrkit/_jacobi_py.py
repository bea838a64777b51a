"""Pure-Python cyclic Jacobi sweeps (fallback backend).

Same contract as the compiled kernel in ``_jacobi_cy``: rotate ``A`` in place
to (near-)diagonal form while accumulating the rotations into ``V``.
"""

import math

import numpy as np

BACKEND = "python"


def jacobi_sweeps(A, V, rel_tol, max_sweeps):
    """Run cyclic Jacobi sweeps on symmetric ``A`` (modified in place).

    ``V`` must come in as the identity; on return ``V @ diag(A) @ V.T``
    reconstructs the original matrix.  Returns the number of sweeps used,
    or -1 if the off-diagonal norm never dropped below ``rel_tol * ||A||_F``.
    """
    n = A.shape[0]
    if n < 2:
        return 0
    norm_a = np.linalg.norm(A)
    stop = rel_tol * norm_a
    if norm_a == 0.0:
        return 0
    for sweep in range(max_sweeps):
        off = math.sqrt(max(0.0, np.sum(A * A) - np.sum(np.diag(A) ** 2)))
        if off <= stop:
            return sweep
        # Small rotations are skipped early in a sweep; the threshold decays
        # so that every entry is eventually annihilated.
        thresh = off / (n * n) if sweep < 3 else 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= thresh:
                    continue
                app = A[p, p]
                aqq = A[q, q]
                # Skip entries already negligible against their diagonal.
                if abs(apq) <= 1e-300 or abs(apq) <= 1e-18 * (abs(app) + abs(aqq)):
                    continue
                theta = 0.5 * (aqq - app) / apq
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rp = A[p, :].copy()
                rq = A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                cp = A[:, p].copy()
                cq = A[:, q].copy()
                A[:, p] = c * cp - s * cq
                A[:, q] = s * cp + c * cq
                A[p, q] = 0.0
                A[q, p] = 0.0
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    off = math.sqrt(max(0.0, np.sum(A * A) - np.sum(np.diag(A) ** 2)))
    return max_sweeps if off <= stop else -1
