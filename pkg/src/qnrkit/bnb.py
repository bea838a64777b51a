"""Spatial branch and bound over box-constrained QCQPs.

Nodes carry a sub-box; the lower bound comes from the tangent-cut relaxation
with lazily separated product cells, and incumbents from a projected local
search started at the relaxation point.  Auxiliary variables introduced by a
reformulation (trailing variables pinned by quadratic equalities of the form
x'Z x - t = 0) are never branched on; their boxes are re-derived from each
node's x-box by interval arithmetic.
"""

import heapq
import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from . import mccormick as mc
from .core import QcqpInstance

DEFAULT_REL_TOL = 1e-4
DEFAULT_ABS_TOL = 1e-6
DEFAULT_NODE_LIMIT = 1_000_000
DEFAULT_TIME_LIMIT = 1200.0
FEAS_TOL = 1e-6
CELL_ROUNDS_PER_NODE = 5

OPTIMAL = "OPTIMAL"
NODE_LIMIT = "NODE_LIMIT"
TIME_LIMIT = "TIME_LIMIT"
INFEASIBLE = "INFEASIBLE"


@dataclass(order=True)
class Node:
    bound: float
    depth: int = field(compare=True)
    seq: int = field(compare=True)
    lb: np.ndarray = field(compare=False, default=None)
    ub: np.ndarray = field(compare=False, default=None)
    cells: frozenset = field(compare=False, default=frozenset())
    x: np.ndarray = field(compare=False, default=None)
    X: np.ndarray = field(compare=False, default=None)
    hot: tuple = field(compare=False, default=())


@dataclass
class SolveReport:
    status: str
    value: float = np.inf
    x: np.ndarray = None
    bound: float = -np.inf
    gap: float = np.inf
    nodes: int = 0
    seconds: float = 0.0
    root_bound: float = np.nan
    log: list = field(default_factory=list)


def _aux_structure(inst):
    """Find trailing variables pinned as s t = x'Z x; maps slot -> (Z block, s)."""
    nb = inst.n - inst.aux_count
    out = {}
    for g in inst.constraints:
        if g.sense != "EQ":
            continue
        slots = np.nonzero(g.c[nb:])[0]
        if len(slots) != 1 or g.c[nb + slots[0]] >= 0.0:
            continue
        if np.any(g.Q[nb:, :]) or np.any(g.Q[:, nb:]):
            continue
        out[nb + int(slots[0])] = (g.Q[:nb, :nb], -float(g.c[nb + slots[0]]))
    return out


def _tighten_aux(inst, lb, ub, aux):
    for slot, (Zq, s) in aux.items():
        nb = inst.n - inst.aux_count
        lo, hi = mc.quad_interval(Zq, np.zeros(nb), lb[:nb], ub[:nb])
        lb[slot] = lo / s
        ub[slot] = hi / s


def branch_select(inst, x, X, lb, ub):
    """Pick the branching variable and point.

    Score per variable: accumulated product-term linearization error weighted
    by the coefficients that touch it.  Branch point is the relaxation value
    clipped into the middle 60% of the interval; degenerate intervals fall
    back to the longest edge.
    """
    nb = inst.n - inst.aux_count
    score = np.zeros(nb)
    err = np.abs(X[:nb, :nb] - np.outer(x[:nb], x[:nb]))
    weight = np.abs(inst.objective.Q[:nb, :nb]).copy()
    for g in inst.constraints:
        weight += np.abs(g.Q[:nb, :nb])
    score = (err * weight).sum(axis=1)
    width = ub[:nb] - lb[:nb]
    score[width <= 1e-9] = -1.0
    j = int(np.argmax(score))
    if score[j] <= 1e-12:
        j = int(np.argmax(width))
        if width[j] <= 1e-9:
            return None, None
    lo, hi = lb[j], ub[j]
    point = min(max(x[j], lo + 0.2 * (hi - lo)), hi - 0.2 * (hi - lo))
    return j, point


def _project_affine_box(x, eqs, lb, ub, iters=30):
    for _ in range(iters):
        x = np.minimum(np.maximum(x, lb), ub)
        shift = 0.0
        for a, d in eqs:
            nrm = float(a @ a)
            if nrm > 0:
                t = (a @ x - d) / nrm
                x = x - t * a
                shift = max(shift, abs(t))
        if shift < 1e-12:
            break
    return np.minimum(np.maximum(x, lb), ub)


def local_search_incumbent(inst, x0, max_iter=120, penalty=1e3):
    """Polish a relaxation point into a feasible candidate.

    Projected gradient with Armijo backtracking on the objective plus a
    quadratic penalty for nonconvex inequality rows; linear equalities are
    handled by projection and slight constraint violations by bisecting
    toward the box midpoint.  Auxiliary tied variables are recomputed, not
    optimized.  Returns (value, x) or (inf, None).
    """
    nb = inst.n - inst.aux_count
    aux = _aux_structure(inst)
    eqs = [(a[:nb], d) for a, d in inst.equality_data]
    ineq = [g for g in inst.constraints if g.sense == "LE"]
    lb, ub = inst.lb[:nb], inst.ub[:nb]

    def complete(y):
        x = np.zeros(inst.n)
        x[:nb] = y
        for slot, (Zq, s) in aux.items():
            # tie row reads 1/2 x'Zq x - s t = 0
            x[slot] = 0.5 * float(y @ Zq @ y) / s if Zq.size else 0.0
        # clip tied values into their declared boxes
        x[nb:] = np.clip(x[nb:], inst.lb[nb:], inst.ub[nb:])
        return x

    def merit(y):
        x = complete(y)
        pen = 0.0
        for g in ineq:
            pen += max(0.0, g.value(x) - g.b) ** 2
        return inst.objective_value(x) + penalty * pen, x

    y = _project_affine_box(np.asarray(x0[:nb], dtype=float), eqs, lb, ub)
    f, _ = merit(y)
    step = 1.0
    for _ in range(max_iter):
        x = complete(y)
        grad = inst.objective.grad(x)[:nb]
        for slot, (Zq, s) in aux.items():
            coef = inst.objective.c[slot]
            if coef:
                grad += (coef / s) * (Zq @ y)
        for g in ineq:
            v = g.value(x) - g.b
            if v > 0:
                grad += 2.0 * penalty * v * g.grad(x)[:nb]
        ok = False
        while step > 1e-10:
            y_new = _project_affine_box(y - step * grad, eqs, lb, ub)
            f_new, _ = merit(y_new)
            if f_new < f - 1e-4 * step * float(grad @ grad):
                y, f = y_new, f_new
                step = min(step * 2.0, 1.0)
                ok = True
                break
            step *= 0.5
        if not ok:
            break

    x = complete(y)
    # Repair small quadratic infeasibility by pulling toward the box center.
    center = _project_affine_box(0.5 * (lb + ub), eqs, lb, ub)
    for _ in range(60):
        if inst.max_violation(x) <= FEAS_TOL:
            return float(inst.objective_value(x)), x
        y = 0.5 * (y + center)
        x = complete(y)
    if inst.max_violation(x) <= FEAS_TOL:
        return float(inst.objective_value(x)), x
    return np.inf, None


def _node_bound(inst, lo, hi, cells, aux, deadline=None, seed=(), stop_above=None):
    """Relaxation bound on a sub-box with per-node cell separation."""
    active = set(cells)
    res = None
    for _ in range(CELL_ROUNDS_PER_NODE):
        model = mc.build_mcr(inst, box=(lo, hi), extra_cells=sorted(active))
        res = mc.relaxation_bound(model, deadline=deadline, seed=seed,
                                  stop_above=stop_above)
        seed = res.hot
        if res.status != "optimal" or res.x is None:
            return res, frozenset(active)
        viol = mc.violated_cells(model, res.x, res.X)
        if not viol:
            break
        active.update((p, q) for p, q, _v in viol)
    return res, frozenset(active)


def solve_global(inst, rel_tol=DEFAULT_REL_TOL, abs_tol=DEFAULT_ABS_TOL,
                 node_limit=DEFAULT_NODE_LIMIT, time_limit=DEFAULT_TIME_LIMIT,
                 log_stream=None, log_every=50):
    """Globally minimize a box QCQP; returns a SolveReport.

    Best-bound node selection with depth as tiebreak; terminates when the
    relative gap drops below ``rel_tol`` or a limit trips.
    """
    if not (np.all(np.isfinite(inst.lb)) and np.all(np.isfinite(inst.ub))):
        raise ValueError("global solve needs finite bounds; preprocess first")
    t0 = time.monotonic()
    aux = _aux_structure(inst)
    seq = itertools.count()
    incumbent = np.inf
    best_x = None
    report = SolveReport(status=OPTIMAL)

    deadline = t0 + time_limit
    lb0 = inst.lb.copy()
    ub0 = inst.ub.copy()
    _tighten_aux(inst, lb0, ub0, aux)
    res, cells = _node_bound(inst, lb0, ub0, frozenset(), aux, deadline=deadline)
    if res.status == "infeasible":
        report.status = INFEASIBLE
        report.seconds = time.monotonic() - t0
        return report
    root_bound = res.value if res.value is not None else -np.inf
    report.root_bound = root_bound
    if res.x is not None:
        val, cand = local_search_incumbent(inst, res.x)
        if val < incumbent:
            incumbent, best_x = val, cand

    heap = [Node(root_bound, 0, next(seq), lb0, ub0, cells, res.x, res.X, res.hot)]
    nodes = 0

    def gap_of(bound):
        if incumbent == np.inf:
            return np.inf
        return (incumbent - bound) / max(1.0, abs(incumbent))

    while heap:
        node = heapq.heappop(heap)
        bound = node.bound
        if gap_of(bound) <= rel_tol or incumbent - bound <= abs_tol:
            heap.clear()
            break
        nodes += 1
        if nodes > node_limit:
            report.status = NODE_LIMIT
            heapq.heappush(heap, node)
            break
        if time.monotonic() - t0 > time_limit:
            report.status = TIME_LIMIT
            heapq.heappush(heap, node)
            break
        if log_stream is not None and nodes % log_every == 0:
            line = (f"node={nodes} bound={bound:.9g} incumbent={incumbent:.9g} "
                    f"gap={gap_of(bound):.3e}")
            log_stream.write(line + "\n")
            report.log.append(line)

        # Branch from the relaxation point stored when the node was created.
        if node.x is None:
            continue
        cells = node.cells
        j, point = branch_select(inst, node.x, node.X, node.lb, node.ub)
        if j is None:
            continue
        for side in (0, 1):
            lo = node.lb.copy()
            hi = node.ub.copy()
            if side == 0:
                hi[j] = point
            else:
                lo[j] = point
            _tighten_aux(inst, lo, hi, aux)
            # A node whose bound clears the pruning line is discarded anyway,
            # so its cut loop may stop the moment the line is crossed.
            stop_above = None
            if incumbent < np.inf:
                stop_above = incumbent - max(abs_tol,
                                             rel_tol * max(1.0, abs(incumbent)))
            cres, ccells = _node_bound(inst, lo, hi, cells, aux,
                                       deadline=deadline, seed=node.hot,
                                       stop_above=stop_above)
            if cres.status == "infeasible" or cres.value is None:
                continue
            cbound = max(bound, cres.value)
            # Polishing every relaxation point is wasteful once a good
            # incumbent exists; keep it for early nodes and periodic refresh.
            polish = incumbent == np.inf or nodes <= 16 or nodes % 16 == 0
            if cres.x is not None and polish:
                val, cand = local_search_incumbent(inst, cres.x)
                if val < incumbent:
                    incumbent, best_x = val, cand
            if gap_of(cbound) > rel_tol and incumbent - cbound > abs_tol:
                heapq.heappush(heap, Node(cbound, node.depth + 1, next(seq),
                                          lo, hi, ccells, cres.x, cres.X,
                                          cres.hot))

    final_bound = min((nd.bound for nd in heap), default=incumbent)
    if report.status == OPTIMAL and incumbent == np.inf:
        report.status = INFEASIBLE
    report.value = incumbent
    report.x = best_x
    report.bound = min(final_bound, incumbent)
    report.gap = gap_of(report.bound)
    report.nodes = nodes
    report.seconds = time.monotonic() - t0
    if log_stream is not None:
        line = (f"node={nodes} bound={report.bound:.9g} incumbent={incumbent:.9g} "
                f"gap={report.gap:.3e}")
        log_stream.write(line + "\n")
        report.log.append(line)
    return report
