"""Recovery of splitting parameters from SDP duals and model rewriting.

Each quadratic function 1/2 x'Q x is split as 1/2 x'(Q - Z)x + 1/2 t with a
new variable t pinned by the quadratic equality t = x'Z x.  When Q - Z is
positive semidefinite the curvature left in the inequalities is convex and
all nonconvexity sits in the t-equalities, which relax tightly under the
lifted-cell treatment.
"""

from dataclasses import dataclass, field

import numpy as np

from . import sdp
from .core import QcqpInstance, QuadFunc
from .linalg import min_eigenvalue
from .mccormick import quad_interval

PSD_SLACK = 1e-6  # accepted indefiniteness in Q - Z before repair
RECOVERY_TOL = 1e-5  # beyond this the duals are rejected outright
TRUNCATE_TOL = 1e-9
DEFAULT_FALLBACK_GAMMA = 1e4

SDP_OPTIMAL = "SDP_OPTIMAL"
GAMMA_FIXED_FALLBACK = "GAMMA_FIXED_FALLBACK"
MANUAL = "MANUAL"


class RecoveryError(RuntimeError):
    """Raised when SDP duals are too inconsistent to produce valid parameters."""


@dataclass(frozen=True)
class QnrParams:
    Z: tuple  # splitting matrix per quadratic function, objective first
    gamma: np.ndarray = None  # equality multipliers (LCQP variants)
    provenance: str = MANUAL
    sdp_value: float = np.nan

    def __post_init__(self):
        Zs = tuple(np.asarray(Zi, dtype=float) for Zi in self.Z)
        for Zi in Zs:
            Zi.setflags(write=False)
        object.__setattr__(self, "Z", Zs)
        if self.gamma is not None:
            g = np.asarray(self.gamma, dtype=float)
            g.setflags(write=False)
            object.__setattr__(self, "gamma", g)

    @property
    def aux_count(self):
        return sum(1 for Zi in self.Z if np.any(Zi))


def _truncate(Z):
    Z = np.where(np.abs(Z) < TRUNCATE_TOL, 0.0, Z)
    return 0.5 * (Z + Z.T)


def _repair_psd(residual, Z, label):
    """Shift Z down along the identity if residual = Q_eff - Z just misses PSD."""
    lo = min_eigenvalue(residual)
    if lo >= 0.0:
        return Z
    scale = 1.0 + float(np.abs(residual).max()) + float(np.abs(Z).max())
    if lo < -RECOVERY_TOL * scale:
        raise RecoveryError(
            f"RECOVERY_FAILED: {label} violates the convexity condition by {-lo:.3e}"
        )
    return Z + (lo - 1e-9) * np.eye(Z.shape[0])


def recover_z_qcqp(inst, sol):
    """Splitting parameters for a box QCQP from SDP+RLT duals.

    The constraint splits keep all curvature in the t-equalities (Z_i = Q_i);
    the objective split comes out of the stationarity condition.
    """
    if sol.beta is None:
        raise RecoveryError("RECOVERY_FAILED: solution carries no duals")
    n = inst.n
    Z0 = -2.0 * np.diag(sol.beta) + 2.0 * (sol.M + sol.N - sol.R - sol.S)
    if sol.gamma is not None and inst.m:
        for g, cons in zip(sol.gamma, inst.constraints):
            Z0 = Z0 - g * cons.Q
    Z0 = _truncate(Z0)
    Z0 = _repair_psd(inst.objective.Q - Z0, Z0, "objective")
    Z = [Z0] + [cons.Q.copy() for cons in inst.constraints]
    return QnrParams(Z=tuple(Z), provenance=SDP_OPTIMAL, sdp_value=sol.obj)


def recover_z_lcqp(inst, sol, gamma=None, provenance=SDP_OPTIMAL):
    """Splitting parameters for LCQP/StQP/BoxQP from the equality-penalized SDP."""
    if sol.beta is None:
        raise RecoveryError("RECOVERY_FAILED: solution carries no duals")
    n = inst.n
    if gamma is None:
        gamma = sol.gamma
    if gamma is None:
        gamma = np.zeros(len(inst.equality_data))
    gamma = np.asarray(gamma, dtype=float)
    Z = _truncate(-2.0 * np.diag(sol.beta) + 2.0 * (sol.M + sol.N - sol.R - sol.S))
    Qeff = inst.objective.Q.copy()
    for g, (a, _d) in zip(gamma, inst.equality_data):
        Qeff += 2.0 * g * np.outer(a, a)
    Z = _repair_psd(Qeff - Z, Z, "objective")
    return QnrParams(Z=(Z,), gamma=gamma, provenance=provenance, sdp_value=sol.obj)


def _normalized(inst):
    """Rescale the objective toward unit magnitude; the splitting scales back."""
    s = max(1.0, float(np.abs(inst.objective.Q).max()))
    if s == 1.0:
        return inst, 1.0
    g = inst.objective
    scaled = QcqpInstance(n=inst.n, objective=QuadFunc(g.Q / s, g.c / s, g.b / s, "OBJ"),
                          constraints=inst.constraints, lb=inst.lb, ub=inst.ub,
                          kind=inst.kind, equality_data=inst.equality_data,
                          aux_count=inst.aux_count)
    return scaled, s


def _rescaled(params, s):
    if s == 1.0:
        return params
    Z = (params.Z[0] * s,) + params.Z[1:]
    gamma = None if params.gamma is None else params.gamma * s
    return QnrParams(Z=Z, gamma=gamma, provenance=params.provenance,
                     sdp_value=params.sdp_value * s)


def derive_params(inst, cut_tol=sdp.CUT_TOL, solver_tol=sdp.SOLVER_TOL,
                  fallback=DEFAULT_FALLBACK_GAMMA):
    """End-to-end parameter selection with the gamma-fixed fallback path."""
    inst, s = _normalized(inst)
    if inst.kind in ("QCQP", "BOXQP") and not inst.equality_data:
        builder = sdp.build_sdp_rlt
        sol, _cells = sdp.iterative_cut_solve(inst, builder, tol=cut_tol,
                                              solver_tol=solver_tol)
        if sol.status == sdp.INFEASIBLE_OR_UNATTAINED:
            raise RecoveryError("RECOVERY_FAILED: parameter SDP did not solve")
        return _rescaled(recover_z_qcqp(inst, sol), s)
    cell_mode = "nonneg" if inst.kind == "STQP" else "full"
    try:
        sol, _cells = sdp.iterative_cut_solve(inst, sdp.build_lcqp_sdp_rlt,
                                              tol=cut_tol, solver_tol=solver_tol,
                                              cell_mode=cell_mode)
        if sol.status == sdp.INFEASIBLE_OR_UNATTAINED:
            raise RecoveryError("free-multiplier SDP unattained")
        return _rescaled(recover_z_lcqp(inst, sol), s)
    except RecoveryError:
        return _rescaled(fallback_gamma(inst, gamma=fallback, cut_tol=cut_tol,
                                        solver_tol=solver_tol, cell_mode=cell_mode), s)


def fallback_gamma(inst, gamma=DEFAULT_FALLBACK_GAMMA, cut_tol=sdp.CUT_TOL,
                   solver_tol=sdp.SOLVER_TOL, cell_mode="full"):
    """Gamma-fixed parameter selection used when the free-multiplier SDP fails."""
    k = len(inst.equality_data)
    if k == 0:
        # Without equalities the penalty disappears and the plain path applies.
        sol, _cells = sdp.iterative_cut_solve(inst, sdp.build_sdp_rlt, tol=cut_tol,
                                              solver_tol=solver_tol)
        if sol.status == sdp.INFEASIBLE_OR_UNATTAINED:
            raise RecoveryError("RECOVERY_FAILED: parameter SDP did not solve")
        return recover_z_qcqp(inst, sol)
    gvec = np.full(k, float(gamma))
    sol, _cells = sdp.iterative_cut_solve(inst, sdp.build_lcqp_sdp_rlt, tol=cut_tol,
                                          solver_tol=solver_tol, gamma_fixed=gvec,
                                          cell_mode=cell_mode)
    if sol.status == sdp.INFEASIBLE_OR_UNATTAINED:
        raise RecoveryError("RECOVERY_FAILED: gamma-fixed SDP did not solve")
    return recover_z_lcqp(inst, sol, gamma=gvec, provenance=GAMMA_FIXED_FALLBACK)


# ----------------------------------------------------------- reformulation


def _aux_bounds(Z, lb, ub):
    lo, hi = quad_interval(2.0 * Z, np.zeros(Z.shape[0]), lb, ub)
    return lo, hi


def _extend(Q, c, n_tot):
    n = Q.shape[0]
    Qe = np.zeros((n_tot, n_tot))
    Qe[:n, :n] = Q
    ce = np.zeros(n_tot)
    ce[:n] = c
    return Qe, ce


def build_qnr(inst, params):
    """Rewrite a box QCQP with its splitting parameters.

    Every function with a nonzero Z gains a variable t with t = x'Z x kept as
    a quadratic equality; the remaining curvature Q - Z is convex.  Functions
    with Z = 0 are carried over untouched.
    """
    n = inst.n
    funcs = [inst.objective] + list(inst.constraints)
    if len(params.Z) != len(funcs):
        raise ValueError("parameter count does not match the instance")
    aux = [k for k, Zk in enumerate(params.Z) if np.any(Zk)]
    n_tot = n + len(aux)
    slot = {k: n + j for j, k in enumerate(aux)}

    # Each t is stored divided by a scale so its box is O(1); badly scaled
    # aux columns otherwise wreck the relaxation LPs.
    lb = np.concatenate([inst.lb, np.zeros(len(aux))])
    ub = np.concatenate([inst.ub, np.zeros(len(aux))])
    scale = {}
    for k in aux:
        lo, hi = _aux_bounds(params.Z[k], inst.lb, inst.ub)
        s = max(1.0, abs(lo), abs(hi))
        scale[k] = s
        lb[slot[k]] = lo / s
        ub[slot[k]] = hi / s

    new_funcs = []
    ties = []
    for k, (g, Zk) in enumerate(zip(funcs, params.Z)):
        Qe, ce = _extend(g.Q - Zk, g.c, n_tot)
        if k in aux:
            s = scale[k]
            ce[slot[k]] = 0.5 * s  # the split puts 1/2 t alongside 1/2 x'(Q-Z)x
            Zt, ct = _extend(2.0 * Zk, np.zeros(n), n_tot)
            ct[slot[k]] = -s  # x'Zx - s that = 0
            ties.append(QuadFunc(Zt, ct, 0.0, "EQ"))
        new_funcs.append(QuadFunc(Qe, ce, g.b, g.sense))

    eqs = tuple((np.concatenate([a, np.zeros(len(aux))]), d)
                for a, d in inst.equality_data)
    return QcqpInstance(
        n=n_tot,
        objective=new_funcs[0],
        constraints=tuple(new_funcs[1:]) + tuple(ties),
        lb=lb,
        ub=ub,
        kind="QCQP",
        equality_data=eqs,
        aux_count=len(aux),
    )


def build_lcqp_qnr(inst, params):
    """Rewrite LCQP/StQP/BoxQP: split objective plus squared-equality penalty."""
    n = inst.n
    Z = params.Z[0]
    gamma = params.gamma if params.gamma is not None else np.zeros(len(inst.equality_data))
    Qeff = inst.objective.Q.copy()
    ceff = inst.objective.c.copy()
    beff = inst.objective.b
    for g, (a, d) in zip(gamma, inst.equality_data):
        Qeff += 2.0 * g * np.outer(a, a)
        ceff += -2.0 * g * d * a
        beff += g * d * d
    shim = QcqpInstance(n=n, objective=QuadFunc(Qeff, ceff, beff, "OBJ"),
                        constraints=inst.constraints, lb=inst.lb, ub=inst.ub,
                        kind="QCQP", equality_data=inst.equality_data)
    return build_qnr(shim, QnrParams(Z=(Z,) + tuple(c.Q for c in inst.constraints),
                                     provenance=params.provenance))


def preprocess_qcqp2_bounds(inst, tol=sdp.SOLVER_TOL):
    """Attach a certified box to an unbounded QCQP via per-variable SDP bounds."""
    lb = np.empty(inst.n)
    ub = np.empty(inst.n)
    for i in range(inst.n):
        lb[i] = sdp.solve_bounding(inst, i, "min", tol=tol)
        ub[i] = sdp.solve_bounding(inst, i, "max", tol=tol)
    return QcqpInstance(n=inst.n, objective=inst.objective,
                        constraints=inst.constraints, lb=lb, ub=ub, kind="QCQP",
                        equality_data=inst.equality_data)


def inequality_to_standard(inst, rows):
    """Turn linear inequality rows a'x <= d into equalities with [0,1] slacks.

    ``rows`` is a sequence of (a, d) pairs over the original variables.  Each
    gains a slack scaled by the row's reachable range so the new variable
    lives on the unit interval.
    """
    n = inst.n
    k = len(rows)
    lb = np.concatenate([inst.lb, np.zeros(k)])
    ub = np.concatenate([inst.ub, np.ones(k)])
    eqs = [(np.concatenate([a, np.zeros(k)]), d) for a, d in inst.equality_data]
    for j, (a, d) in enumerate(rows):
        a = np.asarray(a, dtype=float)
        lo = float(np.minimum(a, 0.0) @ inst.ub + np.maximum(a, 0.0) @ inst.lb)
        span = max(d - lo, 1e-12)
        coef = np.zeros(k)
        coef[j] = span
        eqs.append((np.concatenate([a, coef]), d))

    def grow(g):
        Qe, ce = _extend(g.Q, g.c, n + k)
        return QuadFunc(Qe, ce, g.b, g.sense)

    return QcqpInstance(n=n + k, objective=grow(inst.objective),
                        constraints=tuple(grow(g) for g in inst.constraints),
                        lb=lb, ub=ub, kind="LCQP", equality_data=tuple(eqs))
