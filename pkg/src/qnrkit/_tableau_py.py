"""Pure-Python tableau row kernels; contract mirrors ``_tableau_cy``."""

import numpy as np

BACKEND = "python"


def pivot_update(T, r, col, m, wend):
    """Gauss-Jordan step on rows 0..m (incl. objective row) at (r, col).

    Only columns [0, wend) and the rhs (last column) are touched.
    """
    piv = T[r, col]
    T[r, :wend] /= piv
    T[r, -1] /= piv
    colvals = T[: m + 1, col].copy()
    colvals[r] = 0.0
    rows = np.nonzero(colvals != 0.0)[0]
    if rows.size:
        T[rows, :wend] -= colvals[rows, None] * T[r, :wend]
        T[rows, -1] -= colvals[rows] * T[r, -1]
    T[: m + 1, col] = 0.0
    T[r, col] = 1.0


def eliminate_row(T, basis, i, scol, nrows, wend, ncols):
    """Express row i in the basis of rows 0..nrows-1 (skipping column scol)."""
    for r in range(nrows):
        bcol = basis[r]
        if bcol < ncols and bcol != scol:
            mult = T[i, bcol]
            if mult != 0.0:
                T[i, :wend] -= mult * T[r, :wend]
                T[i, -1] -= mult * T[r, -1]
