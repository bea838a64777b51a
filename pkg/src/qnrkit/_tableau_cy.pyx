# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled tableau row kernels (hot loops of the dense simplex)."""

BACKEND = "cython"


def pivot_update(double[:, ::1] T, int r, int col, int m, int wend):
    """Gauss-Jordan step on rows 0..m (incl. objective row) at (r, col).

    Only columns [0, wend) and the rhs (last column) are touched.  Same
    contract as the pure fallback in ``_tableau_py``.
    """
    cdef int nc = T.shape[1] - 1
    cdef int i, j
    cdef double inv = 1.0 / T[r, col]
    cdef double mult

    for j in range(wend):
        T[r, j] *= inv
    T[r, nc] *= inv
    for i in range(m + 1):
        if i == r:
            continue
        mult = T[i, col]
        if mult != 0.0:
            for j in range(wend):
                T[i, j] -= mult * T[r, j]
            T[i, nc] -= mult * T[r, nc]
        T[i, col] = 0.0
    T[r, col] = 1.0


def eliminate_row(double[:, ::1] T, long[::1] basis, int i, int scol,
                  int nrows, int wend, int ncols):
    """Express row i in the basis of rows 0..nrows-1 (skipping column scol)."""
    cdef int r, j, bcol
    cdef int nc = T.shape[1] - 1
    cdef double mult

    for r in range(nrows):
        bcol = basis[r]
        if bcol < ncols and bcol != scol:
            mult = T[i, bcol]
            if mult != 0.0:
                for j in range(wend):
                    T[i, j] -= mult * T[r, j]
                T[i, nc] -= mult * T[r, nc]
