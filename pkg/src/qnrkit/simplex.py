"""Dense tableau simplex used by all linear relaxation solves.

Standard form: min c'z  s.t.  A_ub z <= b_ub, A_eq z = b_eq, z >= 0.

Two-phase primal simplex with a Dantzig pricing default and Bland's rule as
the anti-cycling fallback.  Cut rows can be appended after a solve and
re-optimized with the dual simplex, which is what the outer-approximation
loop and branch-and-bound rely on for cheap re-solves.
"""

import os
import time

import numpy as np

if os.environ.get("QNRKIT_FORCE_PURE"):
    from . import _tableau_py as _kernel
else:
    try:
        from . import _tableau_cy as _kernel  # type: ignore[attr-defined]
    except ImportError:  # pragma: no cover - build-dependent
        from . import _tableau_py as _kernel

KERNEL_BACKEND = _kernel.BACKEND

RC_TOL = 1e-9
FEAS_TOL = 1e-9
PIV_TOL = 1e-10

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
STALLED = "stalled"


class DenseSimplex:
    def __init__(self, c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, extra_rows=64):
        c = np.asarray(c, dtype=float)
        self.nvar = c.shape[0]
        A_ub = np.zeros((0, self.nvar)) if A_ub is None else np.asarray(A_ub, dtype=float)
        b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float)
        A_eq = np.zeros((0, self.nvar)) if A_eq is None else np.asarray(A_eq, dtype=float)
        b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
        self.n_ub = A_ub.shape[0]
        self.n_eq = A_eq.shape[0]
        m = self.n_ub + self.n_eq

        # Column layout: structural | slack (one per <= row, incl. future
        # cuts) | artificial.  Rows: <= rows first, then = rows.
        cap_rows = m + extra_rows
        self.slack0 = self.nvar
        self.art0 = self.nvar + self.n_ub + extra_rows
        ncols = self.art0 + m + extra_rows
        self.T = np.zeros((cap_rows + 1, ncols + 1))
        self.m = m
        self.ncols = ncols
        self.basis = np.full(cap_rows, -1, dtype=np.int64)
        self.cost = np.zeros(ncols)
        self.cost[: self.nvar] = c
        self.banned = np.zeros(ncols, dtype=bool)
        self.banned[self.nvar + self.n_ub : self.art0] = True  # unused slack slots
        self.banned[self.art0 :] = True  # artificials never re-enter
        self._extra_used = 0
        # Live column window: structural plus the slack slots in use.  Pivot
        # updates stop here (plus the rhs); phase 1 widens it over the
        # artificials and narrows it back when they retire.
        self._wend = self.slack0 + self.n_ub
        self.status = None

        # Rows are normalized to unit inf-norm so that roundoff left behind
        # by pivoting stays below the pivot tolerance on every scale.
        T = self.T
        for i in range(self.n_ub):
            s = np.abs(A_ub[i]).max()
            s = s if s > 0.0 else 1.0
            T[i, : self.nvar] = A_ub[i] / s
            T[i, -1] = b_ub[i] / s
            T[i, self.slack0 + i] = 1.0
            self.basis[i] = self.slack0 + i
        for k in range(self.n_eq):
            i = self.n_ub + k
            s = np.abs(A_eq[k]).max()
            s = s if s > 0.0 else 1.0
            T[i, : self.nvar] = A_eq[k] / s
            T[i, -1] = b_eq[k] / s

    # ------------------------------------------------------------- helpers

    def _pivot(self, r, col):
        # Updates touch only the live column window plus the rhs; unused
        # capacity slots and retired artificial columns are never read again.
        _kernel.pivot_update(self.T, int(r), int(col), int(self.m), int(self._wend))
        self.basis[r] = col

    def _price_out_basis(self):
        """Rebuild the objective row's reduced costs from self.cost."""
        T = self.T
        m = self.m
        w = self._wend
        T[m, :] = 0.0
        T[m, : self.ncols] = np.where(self.banned, 0.0, self.cost)
        for i in range(m):
            bc = self.cost[self.basis[i]]
            if bc != 0.0:
                T[m, :w] -= bc * T[i, :w]
                T[m, -1] -= bc * T[i, -1]
        # Zero out exactly on basic columns to avoid drift.
        T[m, self.basis[:m]] = 0.0

    def _primal_iterate(self, max_iter, deadline=None):
        T = self.T
        m = self.m
        stall = 0
        last_obj = np.inf
        for it in range(max_iter):
            if deadline is not None and (it & 127) == 0 and time.monotonic() > deadline:
                return STALLED
            rc = T[m, : self.ncols]
            use_bland = stall > 60
            if use_bland:
                cands = np.nonzero((rc < -RC_TOL) & ~self.banned)[0]
                if cands.size == 0:
                    return OPTIMAL
                col = int(cands[0])
            else:
                masked = np.where(self.banned, 0.0, rc)
                col = int(np.argmin(masked))
                if masked[col] >= -RC_TOL:
                    return OPTIMAL
            colvec = T[:m, col]
            pos = np.nonzero(colvec > PIV_TOL)[0]
            if pos.size == 0:
                return UNBOUNDED
            ratios = T[pos, -1] / colvec[pos]
            rmin = ratios.min()
            ties = pos[ratios <= rmin + 1e-12]
            # Smallest basis index among ties (lexicographic-ish tiebreak).
            r = int(ties[np.argmin(self.basis[ties])])
            self._pivot(r, col)
            obj = -T[m, -1]
            if obj < last_obj - 1e-12 * (1.0 + abs(last_obj)):
                stall = 0
                last_obj = obj
            else:
                stall += 1
        return STALLED

    # --------------------------------------------------------------- solve

    def solve(self, max_iter=None, deadline=None):
        m = self.m
        T = self.T
        if max_iter is None:
            max_iter = 200 * (m + self.nvar) + 2000
        # Ensure nonnegative rhs, then add artificials where no slack basis.
        for i in range(m):
            if T[i, -1] < 0:
                T[i, : self.ncols + 1] *= -1.0
                if self.basis[i] >= 0:
                    self.basis[i] = -1  # negated slack no longer basic-feasible
        need_art = [i for i in range(m) if self.basis[i] < 0]
        for k, i in enumerate(need_art):
            col = self.art0 + k
            T[i, col] = 1.0
            self.basis[i] = col
        if need_art:
            self._wend = self.art0 + len(need_art)
            save_cost = self.cost.copy()
            self.cost[:] = 0.0
            self.cost[self.art0 : self.art0 + len(need_art)] = 1.0
            saved_banned = self.banned.copy()
            self.banned[self.art0 : self.art0 + len(need_art)] = False
            self._price_out_basis()
            st = self._primal_iterate(max_iter, deadline)
            phase1 = -T[m, -1]
            self.banned = saved_banned
            self.cost = save_cost
            if st == STALLED:
                self.status = STALLED
                return STALLED
            if phase1 > 1e-7 * (1.0 + np.abs(T[:m, -1]).sum()):
                self.status = INFEASIBLE
                return INFEASIBLE
            # Drive remaining artificials out of the basis where possible.
            for i in range(m):
                if self.basis[i] >= self.art0:
                    row = T[i, : self.ncols]
                    elig = np.nonzero((np.abs(row) > 1e-9) & ~self.banned)[0]
                    if elig.size:
                        self._pivot(i, int(elig[0]))
                    else:
                        T[i, :] = 0.0  # redundant row; its artificial stays basic at 0
            self._wend = self.slack0 + self.n_ub + self._extra_used
        self._price_out_basis()
        st = self._primal_iterate(max_iter, deadline)
        self.status = st
        return st

    # ----------------------------------------------------------- accessors

    @property
    def x(self):
        z = np.zeros(self.nvar)
        for i in range(self.m):
            b = self.basis[i]
            if 0 <= b < self.nvar:
                z[b] = self.T[i, -1]
        return z

    @property
    def objective(self):
        return float(self.cost[: self.nvar] @ self.x)

    # ------------------------------------------------------------ cut rows

    def add_cut(self, a, b):
        """Append a new row a'z <= b (uses a reserved slack column)."""
        if self._extra_used >= (self.art0 - (self.slack0 + self.n_ub)):
            raise RuntimeError("cut capacity exhausted")
        i = self.m
        scol = self.slack0 + self.n_ub + self._extra_used
        self._extra_used += 1
        T = self.T
        a = np.asarray(a, dtype=float)
        s = np.abs(a).max()
        s = s if s > 0.0 else 1.0
        # Shift objective row down.
        T[i + 1, :] = T[i, :]
        T[i, :] = 0.0
        T[i, : self.nvar] = a / s
        T[i, scol] = 1.0
        T[i, -1] = float(b) / s
        self.banned[scol] = False
        self.basis[i] = scol
        self.m += 1
        self._wend = max(self._wend, scol + 1)
        # Express the new row in the current basis.
        _kernel.eliminate_row(T, self.basis, int(i), int(scol),
                              int(self.m - 1), int(self._wend), int(self.ncols))

    def dual_solve(self, max_iter=5000):
        """Re-optimize after cuts with the dual simplex."""
        T = self.T
        for it in range(max_iter):
            m = self.m
            rhs = T[:m, -1]
            r = int(np.argmin(rhs))
            if rhs[r] >= -FEAS_TOL:
                self.status = OPTIMAL
                return OPTIMAL
            row = T[r, : self.ncols]
            # Entries below the eligibility cutoff are elimination residue,
            # not real coefficients; pivoting on them corrupts the tableau.
            elig = np.nonzero((row < -1e-7) & ~self.banned)[0]
            if elig.size == 0:
                if np.any((row < -PIV_TOL) & ~self.banned):
                    # Only junk-scale candidates remain: unresolvable here,
                    # but not proof of infeasibility.
                    self.status = STALLED
                    return STALLED
                self.status = INFEASIBLE
                return INFEASIBLE
            # Reduced costs are nonnegative up to roundoff here; tiny negative
            # noise divided by a tiny pivot would otherwise dominate the
            # ratio test and trap the Harris window on junk columns.
            rc = np.maximum(T[m, elig], 0.0)
            ratios = rc / (-row[elig])
            rmin = ratios.min()
            near = elig[ratios <= rmin + 1e-7 * (1.0 + abs(rmin))]
            # Among near-tied ratios take the largest pivot magnitude; tiny
            # pivots amplify roundoff catastrophically.
            col = int(near[np.argmax(-row[near])])
            if -row[col] < 1e-6:
                # No trustworthy pivot in this row; let the caller re-solve
                # from clean data instead of corrupting the tableau.
                self.status = STALLED
                return STALLED
            self._pivot(r, col)
        self.status = STALLED
        return STALLED


def solve_lp(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, max_iter=None):
    """One-shot LP solve; returns (status, x, objective)."""
    sp = DenseSimplex(c, A_ub, b_ub, A_eq, b_eq)
    st = sp.solve(max_iter=max_iter)
    if st != OPTIMAL:
        return st, None, None
    return st, sp.x, sp.objective
