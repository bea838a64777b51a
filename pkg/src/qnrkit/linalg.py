"""Dense symmetric eigendecomposition and PSD projection.

The cyclic Jacobi sweeps live in a compiled extension when available
(``qnrkit._jacobi_cy``); a pure-Python fallback with the identical contract is
selected at import time otherwise, or when ``QNRKIT_FORCE_PURE`` is set.
"""

import os
from dataclasses import dataclass

import numpy as np

if os.environ.get("QNRKIT_FORCE_PURE"):
    from . import _jacobi_py as _kernel
else:
    try:
        from . import _jacobi_cy as _kernel  # type: ignore[attr-defined]
    except ImportError:  # pragma: no cover - build-dependent
        from . import _jacobi_py as _kernel

KERNEL_BACKEND = _kernel.BACKEND

DEFAULT_SWEEP_TOL = 1e-12
MAX_SWEEPS = 100


class JacobiConvergenceError(RuntimeError):
    """Raised when the Jacobi iteration fails to reach its tolerance."""


@dataclass(frozen=True)
class EigDecomp:
    """Spectral factorization A = V diag(values) V.T, values ascending."""

    values: np.ndarray
    vectors: np.ndarray

    def reconstruct(self):
        return (self.vectors * self.values) @ self.vectors.T


def eigh_jacobi(A, rel_tol=DEFAULT_SWEEP_TOL, max_sweeps=MAX_SWEEPS):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Deterministic for a fixed input: fixed sweep order, stable ascending sort,
    and a fixed sign convention on the eigenvectors.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("eigh_jacobi expects a square matrix")
    n = A.shape[0]
    if n == 0:
        return EigDecomp(np.empty(0), np.empty((0, 0)))
    if not np.allclose(A, A.T, atol=1e-12 * max(1.0, np.abs(A).max(initial=0.0))):
        raise ValueError("eigh_jacobi expects a symmetric matrix")
    work = np.array(0.5 * (A + A.T), dtype=float, order="C")
    V = np.eye(n, order="C")
    sweeps = _kernel.jacobi_sweeps(work, V, rel_tol, max_sweeps)
    if sweeps < 0:
        raise JacobiConvergenceError(
            f"Jacobi iteration did not converge within {max_sweeps} sweeps (n={n})"
        )
    values = np.diag(work).copy()
    order = np.argsort(values, kind="stable")
    values = values[order]
    vectors = V[:, order]
    # Fix the sign of each column: largest-magnitude entry is positive.
    for j in range(n):
        col = vectors[:, j]
        k = int(np.argmax(np.abs(col)))
        if col[k] < 0:
            vectors[:, j] = -col
    return EigDecomp(values, vectors)


def min_eigenvalue(A):
    """Smallest eigenvalue of a symmetric matrix."""
    A = np.asarray(A, dtype=float)
    if A.shape[0] == 0:
        return 0.0
    return float(eigh_jacobi(A).values[0])


def psd_project(A):
    """Projection of a symmetric matrix onto the PSD cone (Frobenius-nearest)."""
    dec = eigh_jacobi(A)
    clipped = np.maximum(dec.values, 0.0)
    return (dec.vectors * clipped) @ dec.vectors.T


def chol_solve(A, b, reg=1e-12):
    """Solve A x = b for symmetric positive (semi)definite A.

    Near-singular pivots are handled by adding ``reg`` on the diagonal and
    retrying with a growing shift.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    shift = 0.0
    scale = max(1.0, np.abs(np.diag(A)).max(initial=0.0))
    for _ in range(8):
        try:
            L = np.linalg.cholesky(A + shift * np.eye(n))
        except np.linalg.LinAlgError:
            shift = reg * scale if shift == 0.0 else shift * 100.0
            continue
        y = np.linalg.solve(L, b)
        return np.linalg.solve(L.T, y)
    raise np.linalg.LinAlgError("chol_solve: matrix is too ill-conditioned")
