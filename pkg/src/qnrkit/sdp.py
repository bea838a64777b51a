"""Parameter-selection SDPs and the operator-splitting conic solver.

Problems are assembled in the standard conic form

    min c'z   s.t.  A z + s = b,   s in {0}^ne x R+^ni x PSD(d),

where z = svec(Y) for the lifted matrix Y = [[1, x'], [x, X]].  The solver is
a homogeneous self-dual embedding driven by alternating projections: an
affine step through a cached factorization of (I + Q) and a cone projection
built on the Jacobi PSD projection plus nonnegative clipping.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .linalg import eigh_jacobi, min_eigenvalue
from .mccormick import mccormick_cell

SOLVER_TOL = 1e-7
SOLVER_MAX_ITER = 50000
RUIZ_PASSES = 10

OPTIMAL = "OPTIMAL"
INACCURATE = "INACCURATE"
INFEASIBLE_OR_UNATTAINED = "INFEASIBLE_OR_UNATTAINED"

CUT_ROUNDS = 20
CUT_TOL = 1e-6
MAX_CUTS_PER_ROUND = 50


# ----------------------------------------------------------------- svec


def svec_indices(d):
    ii, jj = [], []
    for j in range(d):
        for i in range(j + 1):
            ii.append(i)
            jj.append(j)
    return np.array(ii), np.array(jj)


def svec(M):
    d = M.shape[0]
    ii, jj = svec_indices(d)
    v = M[ii, jj].copy()
    v[ii != jj] *= math.sqrt(2.0)
    return v


def smat(v, d):
    ii, jj = svec_indices(d)
    M = np.zeros((d, d))
    w = v.copy()
    w[ii != jj] /= math.sqrt(2.0)
    M[ii, jj] = w
    M[jj, ii] = w
    return M


# --------------------------------------------------------------- problem


@dataclass
class ConicProblem:
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    ne: int  # leading equality rows
    ni: int  # middle nonnegative rows
    psd_dim: int  # trailing PSD block of this order (0 = none)
    obj_offset: float = 0.0
    trace_bound: float = np.inf
    row_map: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def n_rows(self):
        return self.A.shape[0]

    @property
    def n_vars(self):
        return self.A.shape[1]


@dataclass
class ConicSolution:
    status: str
    obj: float = np.nan
    x: np.ndarray = None
    X: np.ndarray = None
    y: np.ndarray = None  # raw row duals (unscaled)
    tau: float = np.nan  # dual objective of the parameter SDP
    gamma: np.ndarray = None
    beta: np.ndarray = None
    M: np.ndarray = None
    N: np.ndarray = None
    R: np.ndarray = None
    S: np.ndarray = None
    mu: np.ndarray = None
    Lambda: np.ndarray = None  # PSD-cone dual block
    residuals: tuple = (np.nan, np.nan, np.nan)
    iterations: int = 0
    log: list = field(default_factory=list)
    cut_bounds: list = field(default_factory=list)


# ------------------------------------------------------------ assembly


def _lifted(n, Qx=None, border=None, corner=0.0):
    """Order-(n+1) symmetric matrix G with ⟨G, Y⟩ = 1/2 Qx·X + 2 border·x + corner."""
    G = np.zeros((n + 1, n + 1))
    if Qx is not None:
        G[1:, 1:] = 0.5 * (Qx + Qx.T) * 0.5  # ⟨G_X, X⟩ = 1/2 Qx·X
    if border is not None:
        G[0, 1:] = border
        G[1:, 0] = border
    G[0, 0] = corner
    return G


def _check_unit_box(inst):
    if not (np.all(inst.lb == 0.0) and np.all(inst.ub <= 1.0) and np.all(inst.ub > 0.0)):
        raise ValueError("SDP builders expect instances pre-scaled to the unit box")


def _cell_rows(n, p, q, mode):
    """Rows (G, rhs, tag) of the McCormick inequalities for pair (p, q)."""
    ep = np.zeros(n)
    eq_ = np.zeros(n)
    ep[p] = 1.0
    eq_[q] = 1.0
    P = np.zeros((n, n))
    P[p, q] = P[q, p] = 1.0  # 1/2 P·X = X_pq
    rows = [(_lifted(n, Qx=-P), 0.0, "M")]  # -X_pq <= 0
    if mode == "full":
        rows += [
            (_lifted(n, Qx=-P, border=0.5 * (ep + eq_)), 1.0, "N"),  # -X_pq + x_p + x_q <= 1
            (_lifted(n, Qx=P, border=-0.5 * ep), 0.0, "R"),  # X_pq - x_p <= 0
            (_lifted(n, Qx=P, border=-0.5 * eq_), 0.0, "S"),  # X_pq - x_q <= 0
        ]
    return rows


def _assemble(inst, cells, cell_mode, gamma_fixed=None, with_quad_eq=False, objective=None):
    """Shared assembly of SDP+RLT-type problems on the unit box."""
    n = inst.n
    d = n + 1
    nz = d * (d + 1) // 2

    eq_rows = []  # (G, rhs)
    ineq_rows = []  # (G, rhs, tag)
    row_map = {}

    E00 = np.zeros((d, d))
    E00[0, 0] = 1.0
    eq_rows.append((E00, 1.0))

    obj_g = inst.objective if objective is None else objective
    C = _lifted(n, Qx=obj_g.Q, border=0.5 * obj_g.c)
    obj_offset = obj_g.b

    # Linear equalities a'x = d  (duals mu, free).
    row_map["mu"] = (len(eq_rows), len(inst.equality_data))
    for a, dd in inst.equality_data:
        eq_rows.append((_lifted(n, border=0.5 * a), dd))

    # Quadratic products of the equalities: free-gamma rows or fixed-gamma
    # objective penalty.
    if with_quad_eq:
        row_map["gamma_eq"] = (len(eq_rows), len(inst.equality_data))
        for a, dd in inst.equality_data:
            eq_rows.append((_lifted(n, Qx=2.0 * np.outer(a, a), border=-dd * a), -dd * dd))
    elif gamma_fixed is not None:
        for g, (a, dd) in zip(gamma_fixed, inst.equality_data):
            C += g * _lifted(n, Qx=2.0 * np.outer(a, a), border=-dd * a)
            obj_offset += g * dd * dd

    # Quadratic inequality rows (duals gamma >= 0).
    row_map["gamma"] = (len(ineq_rows), inst.m)
    for g in inst.constraints:
        if g.sense != "LE":
            raise ValueError("SDP builder expects LE quadratic rows only")
        ineq_rows.append((_lifted(n, Qx=g.Q, border=0.5 * g.c), g.b, "gamma"))

    # Diagonal rows X_ii <= x_i (duals beta >= 0).
    row_map["beta"] = (len(ineq_rows), n)
    for i in range(n):
        Ei = np.zeros((n, n))
        Ei[i, i] = 2.0  # 1/2 * 2 = coefficient 1 on X_ii
        ei = np.zeros(n)
        ei[i] = 1.0
        ineq_rows.append((_lifted(n, Qx=Ei, border=-0.5 * ei), 0.0, "beta"))

    cell_list = sorted(cells)
    row_map["cells"] = []
    for (p, q) in cell_list:
        start = len(ineq_rows)
        rows = _cell_rows(n, p, q, cell_mode)
        ineq_rows.extend((G, rhs, tag) for G, rhs, tag in rows)
        row_map["cells"].append((p, q, start, cell_mode))

    ne = len(eq_rows)
    ni = len(ineq_rows)
    A = np.zeros((ne + ni + nz, nz))
    b = np.zeros(ne + ni + nz)
    for k, (G, rhs) in enumerate(eq_rows):
        A[k] = svec(G)
        b[k] = rhs
    for k, (G, rhs, _tag) in enumerate(ineq_rows):
        A[ne + k] = svec(G)
        b[ne + k] = rhs
    A[ne + ni :, :] = -np.eye(nz)

    return ConicProblem(
        A=A,
        b=b,
        c=svec(C),
        ne=ne,
        ni=ni,
        psd_dim=d,
        obj_offset=obj_offset,
        trace_bound=float(n + 1),
        row_map=row_map,
        meta={"n": n, "cells": cell_list, "cell_mode": cell_mode, "kind": inst.kind,
              "gamma_fixed": None if gamma_fixed is None else np.asarray(gamma_fixed, float),
              "free_gamma_eq": with_quad_eq, "m": inst.m},
    )


def build_sdp_rlt(inst, cells=(), cell_mode="full"):
    """SDP+RLT relaxation of a QCQP on the unit box, restricted to ``cells``."""
    _check_unit_box(inst)
    return _assemble(inst, cells, cell_mode)


def build_lcqp_sdp_rlt(inst, cells=(), gamma_fixed=None, cell_mode="full"):
    """LCQP-SDP+RLT with free multipliers gamma, or its gamma-fixed variant."""
    if inst.kind not in ("LCQP", "STQP", "BOXQP"):
        raise ValueError("LCQP builder expects kind LCQP, STQP or BOXQP")
    _check_unit_box(inst)
    if gamma_fixed is not None:
        gamma_fixed = np.broadcast_to(
            np.asarray(gamma_fixed, dtype=float), (len(inst.equality_data),)
        ).copy()
        return _assemble(inst, cells, cell_mode, gamma_fixed=gamma_fixed)
    return _assemble(inst, cells, cell_mode, with_quad_eq=bool(inst.equality_data))


def build_eigmax_problem(Asym):
    """min lambda s.t. lambda*I - A >= 0 (sanity problem for the solver)."""
    d = Asym.shape[0]
    nz = d * (d + 1) // 2
    A = np.zeros((nz, 1))
    A[:, 0] = -svec(np.eye(d))
    b = -svec(np.asarray(Asym, dtype=float))
    return ConicProblem(A=A, b=b, c=np.array([1.0]), ne=0, ni=0, psd_dim=d,
                        trace_bound=1.0, meta={"eigmax": True})


# ---------------------------------------------------------------- solver


class _Scaling:
    """Ruiz equilibration of A with cone-aware row scaling."""

    def __init__(self, prob, passes=RUIZ_PASSES):
        A = prob.A
        m, nv = A.shape
        self.d = np.ones(m)
        self.e = np.ones(nv)
        psd0 = prob.ne + prob.ni
        As = A.copy()
        for _ in range(passes):
            rn = np.sqrt(np.abs(As).max(axis=1))
            rn[rn == 0] = 1.0
            if prob.psd_dim:
                # One common factor across the PSD block keeps the cone intact.
                block = rn[psd0:]
                rn[psd0:] = math.sqrt(block.max() * max(block.min(), 1e-12))
            cn = np.sqrt(np.abs(As).max(axis=0))
            cn[cn == 0] = 1.0
            As /= rn[:, None]
            As /= cn[None, :]
            self.d /= rn
            self.e /= cn
        self.As = As
        self.bs = self.d * prob.b
        self.cs = self.e * prob.c
        # Secondary scalar balancing of b and c.
        bn = np.linalg.norm(self.bs)
        cn_ = np.linalg.norm(self.cs)
        self.sigma = 1.0 / max(bn, 1e-8)
        self.rho = 1.0 / max(cn_, 1e-8)
        self.bs = self.bs * self.sigma
        self.cs = self.cs * self.rho


def _project_dual_cone(y, prob):
    """Projection onto {0}* x (R+) x PSD (duals of the slack cone)."""
    out = y.copy()
    ne, ni = prob.ne, prob.ni
    out[ne : ne + ni] = np.maximum(out[ne : ne + ni], 0.0)
    if prob.psd_dim:
        d = prob.psd_dim
        M = smat(out[ne + ni :], d)
        dec = eigh_jacobi(M)
        clipped = np.maximum(dec.values, 0.0)
        out[ne + ni :] = svec((dec.vectors * clipped) @ dec.vectors.T)
    return out


def solve_conic(prob, max_iter=SOLVER_MAX_ITER, tol=SOLVER_TOL, log_every=0,
                over_relax=1.5):
    """Solve a conic problem with the splitting iteration; returns both sides."""
    sc = _Scaling(prob)
    A, b, c = sc.As, sc.bs, sc.cs
    m, nv = A.shape
    N = nv + m + 1

    Q = np.zeros((N, N))
    Q[:nv, nv : nv + m] = A.T
    Q[:nv, -1] = c
    Q[nv : nv + m, :nv] = -A
    Q[nv : nv + m, -1] = b
    Q[-1, :nv] = -c
    Q[-1, nv : nv + m] = -b
    IQ_inv = np.linalg.inv(np.eye(N) + Q)

    u = np.zeros(N)
    u[-1] = 1.0
    v = np.zeros(N)
    v[-1] = 1.0

    bnorm = 1.0 + np.linalg.norm(b)
    cnorm = 1.0 + np.linalg.norm(c)
    log = []
    status = None
    it = 0
    pres = dres = gap = np.inf
    check_every = 25
    best_res = np.inf
    best_res_it = 0
    stall_window = 2500
    for it in range(1, max_iter + 1):
        ut = IQ_inv @ (u + v)
        ut = over_relax * ut + (1.0 - over_relax) * u
        w = ut - v
        un = w.copy()
        un[nv : nv + m] = _project_dual_cone(w[nv : nv + m], prob)
        un[-1] = max(w[-1], 0.0)
        v = v - ut + un
        u = un
        if it % check_every and it != max_iter:
            continue
        tau_h = u[-1]
        if tau_h > 1e-9:
            z = u[:nv] / tau_h
            y = u[nv : nv + m] / tau_h
            s = v[nv : nv + m] / tau_h
            pres = np.linalg.norm(A @ z + s - b) / bnorm
            dres = np.linalg.norm(A.T @ y + c) / cnorm
            pobj = float(c @ z)
            dobj = -float(b @ y)
            gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
            if log_every and (it % log_every == 0 or it == max_iter):
                log.append((it, pres, dres, gap, pobj, dobj))
            res = max(pres, dres, gap)
            if res <= tol:
                status = OPTIMAL
                break
            if res < 0.9 * best_res:
                best_res = res
                best_res_it = it
            elif res <= 100 * tol and it - best_res_it >= stall_window:
                # Residuals have plateaued near tolerance; further sweeps
                # will not buy accuracy worth their cost.
                status = INACCURATE
                break
        else:
            # tau near 0: accept a certificate only if its residual is small.
            y = u[nv : nv + m]
            z = u[:nv]
            s = v[nv : nv + m]
            if log_every and it % log_every == 0:
                log.append((it, np.inf, np.inf, np.inf, np.nan, np.nan))
            by = float(b @ y)
            cz = float(c @ z)
            infeas = by < -1e-12 and np.linalg.norm(A.T @ y) * bnorm <= -by * tol
            unbnd = cz < -1e-12 and np.linalg.norm(A @ z + s) * cnorm <= -cz * tol
            if infeas or unbnd:
                status = INFEASIBLE_OR_UNATTAINED
                break
    if status is None:
        status = INACCURATE if max(pres, dres, gap) <= 100 * tol else INFEASIBLE_OR_UNATTAINED

    sol = ConicSolution(status=status, iterations=it, log=log)
    sol.residuals = (float(pres), float(dres), float(gap))
    if status == INFEASIBLE_OR_UNATTAINED and u[-1] <= 1e-9:
        return sol

    tau_h = max(u[-1], 1e-12)
    z = u[:nv] / tau_h
    y = u[nv : nv + m] / tau_h
    # Undo the scaling: z_orig = E z_s / sigma-ish; duals y_orig = D y_s.
    z_orig = sc.e * z / sc.sigma
    y_orig = sc.d * y / sc.rho
    _extract(prob, z_orig, y_orig, sol)
    return sol


def _extract(prob, z, y, sol):
    sol.y = y
    if prob.psd_dim and prob.meta.get("n") is not None:
        d = prob.psd_dim
        Y = smat(z, d)
        y00 = Y[0, 0] if abs(Y[0, 0]) > 1e-8 else 1.0
        Y = Y / y00
        sol.x = Y[0, 1:].copy()
        sol.X = 0.5 * (Y[1:, 1:] + Y[1:, 1:].T)
        sol.obj = float(prob.c @ svec(Y)) + prob.obj_offset
        n = prob.meta["n"]
        m = prob.meta.get("m", 0)
        rm = prob.row_map
        ne = prob.ne
        if "gamma" in rm:
            s0, cnt = rm["gamma"]
            sol.gamma = y[ne + s0 : ne + s0 + cnt].copy()
        if prob.meta.get("free_gamma_eq"):
            s0, cnt = rm["gamma_eq"]
            sol.gamma = y[s0 : s0 + cnt].copy()
        elif prob.meta.get("gamma_fixed") is not None:
            sol.gamma = prob.meta["gamma_fixed"].copy()
        if "mu" in rm:
            s0, cnt = rm["mu"]
            sol.mu = y[s0 : s0 + cnt].copy()
        if "beta" in rm:
            s0, cnt = rm["beta"]
            sol.beta = y[ne + s0 : ne + s0 + cnt].copy()
        M = np.zeros((n, n))
        Nn = np.zeros((n, n))
        R = np.zeros((n, n))
        S = np.zeros((n, n))
        for (p, q, start, mode) in rm.get("cells", []):
            vals = {"M": y[ne + start]}
            if mode == "full":
                vals["N"] = y[ne + start + 1]
                vals["R"] = y[ne + start + 2]
                vals["S"] = y[ne + start + 3]
            for tag, mat in (("M", M), ("N", Nn), ("R", R), ("S", S)):
                val = 0.5 * max(vals.get(tag, 0.0), 0.0)
                mat[p, q] = mat[q, p] = val
        sol.M, sol.N, sol.R, sol.S = M, Nn, R, S
        sol.Lambda = smat(prob.c + prob.A[: prob.ne + prob.ni].T @ y[: prob.ne + prob.ni], d)
        sol.tau = -float(prob.b @ y) + prob.obj_offset
    else:
        sol.obj = float(prob.c @ z) + prob.obj_offset
        sol.tau = -float(prob.b @ y) + prob.obj_offset
        if prob.psd_dim:
            dpsd = prob.psd_dim * (prob.psd_dim + 1) // 2
            sol.Lambda = smat(y[prob.ne + prob.ni : prob.ne + prob.ni + dpsd], prob.psd_dim)
        sol.x = z


def certified_dual_bound(prob, y):
    """A true lower bound on the primal optimum built from a repaired dual.

    Inequality duals are clipped to >= 0, the PSD-block dual is taken to be
    the stationarity residual, and any indefiniteness is charged against the
    primal trace bound.
    """
    yr = y.copy()
    yr[prob.ne : prob.ne + prob.ni] = np.maximum(yr[prob.ne : prob.ne + prob.ni], 0.0)
    lin = slice(0, prob.ne + prob.ni)
    lam = prob.c + prob.A[lin].T @ yr[lin]
    if prob.psd_dim:
        delta = max(0.0, -min_eigenvalue(smat(lam, prob.psd_dim)))
    else:
        delta = float(np.abs(lam).max(initial=0.0))
    return -float(prob.b[lin] @ yr[lin]) - delta * prob.trace_bound + prob.obj_offset


# --------------------------------------------------------------- cut loop


def _violated_unit_cells(n, x, X, active, tol, limit=MAX_CUTS_PER_ROUND):
    out = []
    for p in range(n):
        for q in range(p + 1, n):
            if (p, q) in active:
                continue
            v = mccormick_cell(p, q, 0.0, 1.0, 0.0, 1.0).violation(X[p, q], x[p], x[q])
            if v > tol:
                out.append((p, q, v))
    out.sort(key=lambda t: (-t[2], t[0], t[1]))
    return out[:limit]


def iterative_cut_solve(inst, builder, tol=CUT_TOL, solver_tol=SOLVER_TOL,
                        max_iter=SOLVER_MAX_ITER, max_rounds=CUT_ROUNDS, **builder_kw):
    """Cut loop: start with no off-diagonal cells, re-add violated ones.

    The per-round objective values are recorded on the returned solution as
    ``cut_bounds``; cuts only shrink the feasible set, so up to solver
    accuracy the sequence is non-decreasing.
    """
    active = set()
    sol = None
    bounds = []
    for _ in range(max_rounds):
        prob = builder(inst, cells=sorted(active), **builder_kw)
        sol = solve_conic(prob, max_iter=max_iter, tol=solver_tol)
        if sol.status == INFEASIBLE_OR_UNATTAINED or sol.x is None:
            sol.cut_bounds = bounds
            return sol, frozenset(active)
        bounds.append(float(sol.obj))
        viol = _violated_unit_cells(inst.n, sol.x, sol.X, active, tol)
        if not viol:
            sol.cut_bounds = bounds
            return sol, frozenset(active)
        for p, q, _v in viol:
            active.add((p, q))
    sol.cut_bounds = bounds
    return sol, frozenset(active)


# --------------------------------------------------------------- bounding


def slater_surrogate_check(inst, samples=200, seed=7):
    """Heuristic check that some nonneg combination of the Q_i is PD."""
    rng = np.random.default_rng(seed)
    for _ in range(samples):
        g = rng.random(inst.m)
        Qsum = sum(gi * cons.Q for gi, cons in zip(g, inst.constraints))
        if min_eigenvalue(Qsum) > 1e-9:
            return True
    return False


def solve_bounding(inst, i, direction, tol=SOLVER_TOL, max_iter=SOLVER_MAX_ITER):
    """Bound x_i over the lifted feasible set {rows, X >= xx'} of the instance.

    Returns min (direction="min") or max of x_i, widened by a relative safety
    margin so the resulting box certifiably contains the feasible set.
    """
    if inst.kind != "QCQP_NOBOUNDS":
        raise ValueError("solve_bounding expects kind QCQP_NOBOUNDS")
    if direction not in ("min", "max"):
        raise ValueError("direction must be 'min' or 'max'")
    if not slater_surrogate_check(inst):
        warnings.warn("no positive-definite combination of constraint matrices found; "
                      "bounding SDP may be unbounded", RuntimeWarning)
    n = inst.n
    d = n + 1
    nz = d * (d + 1) // 2
    sign = 1.0 if direction == "min" else -1.0
    ei = np.zeros(n)
    ei[i] = 1.0
    C = _lifted(n, border=0.5 * sign * ei)

    eq_rows = [(np.zeros((d, d)), 1.0)]
    eq_rows[0][0][0, 0] = 1.0
    ineq_rows = [(_lifted(n, Qx=g.Q, border=0.5 * g.c), g.b) for g in inst.constraints]
    ne, ni = len(eq_rows), len(ineq_rows)
    A = np.zeros((ne + ni + nz, nz))
    b = np.zeros(ne + ni + nz)
    for k, (G, rhs) in enumerate(eq_rows):
        A[k] = svec(G)
        b[k] = rhs
    for k, (G, rhs) in enumerate(ineq_rows):
        A[ne + k] = svec(G)
        b[ne + k] = rhs
    A[ne + ni :] = -np.eye(nz)
    # Trace of X is bounded through the quadratic rows only heuristically;
    # keep a loose value for dual safeguarding.
    prob = ConicProblem(A=A, b=b, c=svec(C), ne=ne, ni=ni, psd_dim=d,
                        trace_bound=np.inf, meta={"n": n, "m": inst.m, "bounding": True},
                        row_map={"gamma": (0, ni)})
    sol = solve_conic(prob, max_iter=max_iter, tol=tol)
    if sol.status == INFEASIBLE_OR_UNATTAINED or sol.x is None:
        raise RuntimeError(
            f"bounding solve failed for variable {i} ({direction}); supply explicit bounds"
        )
    val = sign * sol.obj
    margin = 1e-6 * (1.0 + abs(val))
    return val - margin if direction == "min" else val + margin
