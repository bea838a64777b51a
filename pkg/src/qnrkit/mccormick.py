"""McCormick cells and McCormick relaxations (MCR) of QCQP instances.

``build_mcr`` lifts the bilinear products that actually occur in linearized
rows, keeps convex rows quadratic, and ``relaxation_bound`` evaluates the
resulting convex relaxation by outer approximation: tangent cuts on every
convex quadratic row (and on X_ii >= x_i^2), iterated over a dense-simplex LP.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import simplex
from .core import classify_convexity
from .linalg import eigh_jacobi

OA_TOL = 1e-7
OA_MAX_ROUNDS = 200
MAX_HOT_CUTS = 400
CELL_VIOL_TOL = 1e-6
MAX_CELLS_PER_ROUND = 50


@dataclass(frozen=True)
class McCormickCell:
    """Envelope of X_ij = x_i * x_j over [l_i,u_i] x [l_j,u_j].

    ``i == j`` denotes the diagonal pair: a secant upper bound plus the convex
    lower bound X_ii >= x_i^2 (the latter is enforced via tangent cuts).
    """

    i: int
    j: int
    li: float
    ui: float
    lj: float
    uj: float

    def rows(self):
        """Linear rows as (w_coef, xi_coef, xj_coef, rhs, sense), expr <= rhs."""
        li, ui, lj, uj = self.li, self.ui, self.lj, self.uj
        if self.i == self.j:
            if li == ui:
                return [(1.0, 0.0, 0.0, li * li, "EQ")]
            # Secant above, endpoint tangents of x^2 below.
            return [
                (1.0, -(li + ui), 0.0, -li * ui, "LE"),
                (-1.0, 2.0 * li, 0.0, li * li, "LE"),
                (-1.0, 2.0 * ui, 0.0, ui * ui, "LE"),
            ]
        if li == ui and lj == uj:
            return [(1.0, 0.0, 0.0, li * lj, "EQ")]
        if li == ui:
            return [(1.0, 0.0, -li, 0.0, "EQ")]
        if lj == uj:
            return [(1.0, -lj, 0.0, 0.0, "EQ")]
        return [
            (-1.0, lj, li, li * lj, "LE"),
            (-1.0, uj, ui, ui * uj, "LE"),
            (1.0, -uj, -li, -li * uj, "LE"),
            (1.0, -lj, -ui, -ui * lj, "LE"),
        ]

    def violation(self, w, xi, xj):
        """Largest violation of the envelope at (w, x_i, x_j)."""
        v = 0.0
        for cw, ci, cj, rhs, sense in self.rows():
            r = cw * w + ci * xi + cj * xj - rhs
            v = max(v, abs(r) if sense == "EQ" else r)
        if self.i == self.j:
            v = max(v, xi * xi - w)
        return v

    def feasible_range(self, xi, xj):
        """Interval of admissible w at fixed (x_i, x_j)."""
        lo, hi = -np.inf, np.inf
        for cw, ci, cj, rhs, sense in self.rows():
            bound = rhs - ci * xi - cj * xj
            if sense == "EQ":
                lo = max(lo, bound / cw)
                hi = min(hi, bound / cw)
            elif cw > 0:
                hi = min(hi, bound / cw)
            else:
                lo = max(lo, -bound)
        if self.i == self.j:
            lo = max(lo, xi * xi)
        return lo, hi


def mccormick_cell(i, j, li, ui, lj, uj):
    if li > ui or lj > uj:
        raise ValueError("empty box for McCormick cell")
    return McCormickCell(i, j, float(li), float(ui), float(lj), float(uj))


def _prod_bounds(li, ui, lj, uj):
    corners = (li * lj, li * uj, ui * lj, ui * uj)
    return min(corners), max(corners)


def quad_interval(Q, c, l, u):
    """Crude interval bounds of 1/2 x'Qx + c'x over the box [l, u]."""
    lo = hi = 0.0
    n = len(c)
    for i in range(n):
        a = 0.5 * Q[i, i]
        sq_hi = max(l[i] ** 2, u[i] ** 2)
        sq_lo = 0.0 if l[i] <= 0.0 <= u[i] else min(l[i] ** 2, u[i] ** 2)
        lo += min(a * sq_lo, a * sq_hi)
        hi += max(a * sq_lo, a * sq_hi)
        lo += min(c[i] * l[i], c[i] * u[i])
        hi += max(c[i] * l[i], c[i] * u[i])
        for j in range(i + 1, n):
            a = Q[i, j]
            plo, phi = _prod_bounds(l[i], u[i], l[j], u[j])
            lo += min(a * plo, a * phi)
            hi += max(a * plo, a * phi)
    return lo, hi


@dataclass(frozen=True)
class RelaxedModel:
    """A McCormick relaxation: lifted pairs + rows, ready for bound evaluation."""

    base: object  # QcqpInstance
    tag: object  # ConvexityTag
    lb: np.ndarray
    ub: np.ndarray
    active_cells: frozenset  # off-diagonal (i, j), i < j
    obj_linearized: bool
    lin_rows: tuple  # indices of constraints applied in linearized form
    quad_rows: tuple  # indices of constraints kept quadratic (convex LE)

    @property
    def n(self):
        return self.base.n

    def cell(self, i, j):
        if i == j:
            return mccormick_cell(i, i, self.lb[i], self.ub[i], self.lb[i], self.ub[i])
        i, j = min(i, j), max(i, j)
        return mccormick_cell(i, j, self.lb[i], self.ub[i], self.lb[j], self.ub[j])


def _coef_pairs(g, tol=0.0):
    """Off-diagonal index pairs with nonzero coefficient in Q."""
    idx = np.nonzero(np.abs(np.triu(g.Q, 1)) > tol)
    return set(zip(idx[0].tolist(), idx[1].tolist()))


def build_mcr(inst, tag=None, box=None, extra_cells=()):
    """Construct the McCormick relaxation of ``inst``.

    Convex LE rows are kept quadratic; every other quadratic row (and a
    nonconvex objective) is linearized over the lifted matrix.  Off-diagonal
    cells are instantiated lazily: only pairs carrying a nonzero coefficient
    in some linearized row, plus ``extra_cells``.
    """
    if tag is None:
        tag = classify_convexity(inst)
    lb, ub = (inst.lb, inst.ub) if box is None else box
    if not (np.all(np.isfinite(lb)) and np.all(np.isfinite(ub))):
        raise ValueError("unbounded variable: run the bounding pipeline first")

    cells = set(extra_cells)
    lin_rows = []
    quad_rows = []
    for k, g in enumerate(inst.constraints):
        if g.sense == "LE" and k in tag.P:
            if g.is_linear():
                lin_rows.append(k)  # linear rows carry no lifted terms
            else:
                quad_rows.append(k)
        else:
            lin_rows.append(k)
            cells |= _coef_pairs(g)
    obj_linearized = not tag.objective_convex
    if obj_linearized:
        cells |= _coef_pairs(inst.objective)
    return RelaxedModel(
        base=inst,
        tag=tag,
        lb=np.asarray(lb, dtype=float),
        ub=np.asarray(ub, dtype=float),
        active_cells=frozenset(cells),
        obj_linearized=obj_linearized,
        lin_rows=tuple(lin_rows),
        quad_rows=tuple(quad_rows),
    )


class _Layout:
    """Variable layout of the relaxation LP (shifted so all vars are >= 0)."""

    def __init__(self, model):
        inst = model.base
        n = inst.n
        self.n = n
        self.pairs = sorted(model.active_cells)
        self.pair_index = {}
        self.has_eta = not model.obj_linearized
        k = n
        if self.has_eta:
            # The convex objective curvature is split along its eigenvectors:
            # 1/2 x'Qx = sum_k 1/2 lam_k (v_k'x)^2, with one scalar variable
            # w_k = v_k'x and one epigraph variable per component.  Scalar
            # epigraphs converge in a handful of bracketing cuts where a
            # single joint epigraph would crawl.
            dec = eigh_jacobi(inst.objective.Q)
            keep = dec.values > 1e-11 * max(1.0, float(dec.values[-1]))
            self.evals = dec.values[keep]
            # sqrt(lam) is folded into w so each parabola has unit curvature;
            # mixed-scale cut rows otherwise fall below pivot tolerances.
            self.evecs = dec.vectors[:, keep] * np.sqrt(self.evals)
            r = len(self.evals)
            self.w_lo = np.empty(r)
            self.w_hi = np.empty(r)
            for j in range(r):
                v = self.evecs[:, j]
                self.w_lo[j] = float(np.minimum(v * model.lb, v * model.ub).sum())
                self.w_hi[j] = float(np.maximum(v * model.lb, v * model.ub).sum())
            self.w0 = k
            k += r
            self.etak0 = k
            k += r
        self.diag0 = k
        k += n
        for p in self.pairs:
            self.pair_index[p] = k
            k += 1
        self.nvar = k

        self.shift = np.zeros(k)
        self.shift[:n] = model.lb
        if self.has_eta:
            r = len(self.evals)
            self.shift[self.w0 : self.w0 + r] = self.w_lo
        for i in range(n):
            li, ui = model.lb[i], model.ub[i]
            self.shift[self.diag0 + i] = 0.0 if li <= 0.0 <= ui else min(li * li, ui * ui)
        for p in self.pairs:
            i, j = p
            lo, _ = _prod_bounds(model.lb[i], model.ub[i], model.lb[j], model.ub[j])
            self.shift[self.pair_index[p]] = lo

    def lift_coefs(self, g):
        """LP row coefficients of the linearized form 1/2 Q.X + c'x."""
        a = np.zeros(self.nvar)
        a[: self.n] = g.c
        for i in range(self.n):
            if g.Q[i, i] != 0.0:
                a[self.diag0 + i] += 0.5 * g.Q[i, i]
        ii, jj = np.nonzero(np.triu(g.Q, 1))
        for i, j in zip(ii.tolist(), jj.tolist()):
            idx = self.pair_index.get((i, j))
            if idx is None:
                raise KeyError(f"pair ({i},{j}) not lifted")
            a[idx] += g.Q[i, j]
        return a

    def unpack(self, z, model):
        """Map an LP point back to (x, X) with unlifted entries set to x_i x_j."""
        v = z + self.shift
        x = v[: self.n]
        X = np.outer(x, x)
        for i in range(self.n):
            X[i, i] = v[self.diag0 + i]
        for (i, j), idx in self.pair_index.items():
            X[i, j] = X[j, i] = v[idx]
        eta = None
        if self.has_eta:
            r = len(self.evals)
            eta = float(model.base.objective.c @ x) + float(v[self.etak0 : self.etak0 + r].sum())
        return x, X, eta


@dataclass
class BoundResult:
    status: str  # "optimal" | "infeasible" | "stalled"
    value: float = np.nan
    x: np.ndarray = None
    X: np.ndarray = None
    rounds: int = 0
    layout: object = field(default=None, repr=False)
    # Tags of the globally valid tangent cuts found during the solve; a later
    # solve on a sub-box can seed its LP with them and skip most cut rounds.
    hot: tuple = ()


def _cell_row_coefs(layout, i, j, row):
    """LP coefficients of one envelope row of cell (i, j)."""
    cw, ci, cj, rhs, sense = row
    a = np.zeros(layout.nvar)
    col = layout.diag0 + i if i == j else layout.pair_index[(i, j)]
    a[col] = cw
    a[i] += ci
    if i != j:
        a[j] += cj
    return a, rhs, sense


def _assemble_lp(model, layout):
    """Initial LP: structural rows plus column bounds.

    Envelope inequalities are separated lazily inside the bound loop; only
    the degenerate (equality) envelope rows go in eagerly, since cuts can
    only tighten from one side.
    """
    inst = model.base
    A_ub, b_ub, A_eq, b_eq = [], [], [], []

    def add(a, rhs, sense):
        rhs = rhs - float(a @ layout.shift)
        if sense == "EQ":
            A_eq.append(a)
            b_eq.append(rhs)
        else:
            A_ub.append(a)
            b_ub.append(rhs)

    for k in model.lin_rows:
        g = inst.constraints[k]
        a = layout.lift_coefs(g)
        add(a, g.b, g.sense)
    for a_eq, d in inst.equality_data:
        a = np.zeros(layout.nvar)
        a[: layout.n] = a_eq
        add(a, d, "EQ")
    # Box rows (lower bounds are the z >= 0 shift).
    for i in range(layout.n):
        a = np.zeros(layout.nvar)
        a[i] = 1.0
        add(a, model.ub[i], "LE")
    # Upper bounds per lifted column keep the LP bounded before any envelope
    # row is separated.
    for i in range(layout.n):
        a = np.zeros(layout.nvar)
        a[layout.diag0 + i] = 1.0
        add(a, max(model.lb[i] ** 2, model.ub[i] ** 2), "LE")
    for (i, j) in layout.pairs:
        a = np.zeros(layout.nvar)
        a[layout.pair_index[(i, j)]] = 1.0
        _, hi = _prod_bounds(model.lb[i], model.ub[i], model.lb[j], model.ub[j])
        add(a, hi, "LE")
    # Degenerate envelope rows are equalities and cannot wait for separation.
    for i in range(layout.n):
        for row in model.cell(i, i).rows():
            if row[4] == "EQ":
                add(*_cell_row_coefs(layout, i, i, row))
    for (i, j) in layout.pairs:
        for row in model.cell(i, j).rows():
            if row[4] == "EQ":
                add(*_cell_row_coefs(layout, i, j, row))

    if layout.has_eta:
        # Curvature coordinates w_k = v_k'x plus their upper-bound rows;
        # parabola tangents are left entirely to separation.
        r = len(layout.evals)
        for j in range(r):
            a = np.zeros(layout.nvar)
            a[: layout.n] = layout.evecs[:, j]
            a[layout.w0 + j] = -1.0
            add(a, 0.0, "EQ")
            a = np.zeros(layout.nvar)
            a[layout.w0 + j] = 1.0
            add(a, layout.w_hi[j], "LE")
        c = np.zeros(layout.nvar)
        c[: layout.n] = inst.objective.c
        c[layout.etak0 : layout.etak0 + r] = 1.0
    else:
        c = layout.lift_coefs(inst.objective)
    return c, A_ub, b_ub, A_eq, b_eq


def _tag_row(model, layout, tag):
    """Materialize a tangent-cut tag as an LP row; None if it no longer maps."""
    kind = tag[0]
    if kind == "par":
        _, j, wj = tag
        if not layout.has_eta or j >= len(layout.evals):
            return None
        a = np.zeros(layout.nvar)
        a[layout.w0 + j] = wj
        a[layout.etak0 + j] = -1.0
        return a, 0.5 * wj * wj
    if kind == "diag":
        _, i, xi = tag
        a = np.zeros(layout.nvar)
        a[i] = 2.0 * xi
        a[layout.diag0 + i] = -1.0
        return a, xi * xi
    _, k, xt = tag
    g = model.base.constraints[k]
    if k not in model.quad_rows:
        return None
    x = np.array(xt)
    grad = g.grad(x)
    a = np.zeros(layout.nvar)
    a[: layout.n] = grad
    return a, g.b - g.value(x) + float(grad @ x)


def _separate(model, layout, z, x, X, tol, max_env=None):
    """Violated cuts at the LP point as (viol, a, rhs, tag) tuples.

    Tangent cuts carry a tag so callers can replay them on sub-boxes;
    envelope cuts are box-specific and tagged None.
    """
    inst = model.base
    cuts = []
    for k in model.quad_rows:
        g = inst.constraints[k]
        viol = g.value(x) - g.b
        if viol > tol:
            grad = g.grad(x)
            a = np.zeros(layout.nvar)
            a[: layout.n] = grad
            rhs = g.b - g.value(x) + float(grad @ x)
            cuts.append((viol, a, rhs, ("quad", k, tuple(x))))
    if layout.has_eta:
        v = z + layout.shift
        for j in range(len(layout.evals)):
            wj = v[layout.w0 + j]
            viol = 0.5 * wj * wj - v[layout.etak0 + j]
            if viol > tol:
                # eta_j >= w̄ w - 1/2 w̄^2: tangent of the unit parabola
                a = np.zeros(layout.nvar)
                a[layout.w0 + j] = wj
                a[layout.etak0 + j] = -1.0
                cuts.append((viol, a, 0.5 * wj * wj, ("par", j, wj)))
    for i in range(layout.n):
        viol = x[i] * x[i] - X[i, i]
        if viol > tol:
            a = np.zeros(layout.nvar)
            a[i] = 2.0 * x[i]
            a[layout.diag0 + i] = -1.0
            cuts.append((viol, a, x[i] * x[i], ("diag", i, x[i])))

    env = []
    for i in range(layout.n):
        for row in model.cell(i, i).rows():
            if row[4] == "EQ":
                continue
            viol = row[0] * X[i, i] + row[1] * x[i] - row[3]
            if viol > tol:
                env.append((viol, i, i, row))
    for (i, j) in layout.pairs:
        for row in model.cell(i, j).rows():
            if row[4] == "EQ":
                continue
            viol = row[0] * X[i, j] + row[1] * x[i] + row[2] * x[j] - row[3]
            if viol > tol:
                env.append((viol, i, j, row))
    if max_env is not None and len(env) > max_env:
        env.sort(key=lambda t: -t[0])
        env = env[:max_env]
    for viol, i, j, row in env:
        a, rhs, _ = _cell_row_coefs(layout, i, j, row)
        cuts.append((viol, a, rhs, None))
    return cuts


def relaxation_bound(model, tol=OA_TOL, max_rounds=OA_MAX_ROUNDS, deadline=None,
                     seed=(), stop_above=None):
    """Optimal value of the relaxation via cut-loop outer approximation.

    Convex rows, the objective epigraph, the diagonal convex side, and all
    envelope inequalities are enforced by separation; each round re-optimizes
    with the dual simplex.  ``seed`` replays tangent-cut tags from an earlier
    solve (they are valid on any sub-box) so the loop starts close to done.
    Every round's LP optimum is itself a valid bound, so when ``stop_above``
    is given the loop exits as soon as the value clears it.
    """
    inst = model.base
    layout = _Layout(model)
    c, A_ub, b_ub, A_eq, b_eq = _assemble_lp(model, layout)
    hot = []
    hot_seen = set()

    def remember(tag):
        if tag[0] == "par":
            key = (tag[0], tag[1], round(tag[2], 6))
        elif tag[0] == "diag":
            key = (tag[0], tag[1], round(tag[2], 6))
        else:
            key = tag
        if key not in hot_seen:
            hot_seen.add(key)
            hot.append(tag)
            return True
        return False

    # Cut rows (seeded and separated) are kept out of the base LP: stacks of
    # near-parallel tangent rows make the two-phase primal hopelessly
    # degenerate, while the dual simplex absorbs them a few pivots each.
    cut_rows = []
    for tag in seed[-MAX_HOT_CUTS:]:
        made = _tag_row(model, layout, tag)
        if made is None or not remember(tag):
            continue
        a, rhs = made
        cut_rows.append((a, rhs - float(a @ layout.shift)))
    n_env_rows = 4 * len(layout.pairs) + 3 * layout.n
    n_cut_capacity = (n_env_rows + 80 * (len(model.quad_rows) + 2)
                      + 6 * layout.n + 64 + len(cut_rows))

    def fresh():
        sp = simplex.DenseSimplex(
            c,
            np.array(A_ub) if A_ub else None,
            np.array(b_ub) if b_ub else None,
            np.array(A_eq) if A_eq else None,
            np.array(b_eq) if b_eq else None,
            extra_rows=n_cut_capacity,
        )
        st = sp.solve(deadline=deadline)
        if st == simplex.OPTIMAL and cut_rows:
            for a, rhs in cut_rows:
                sp.add_cut(a, rhs)
            st = sp.dual_solve()
        return sp, st

    sp, st = fresh()
    if st == simplex.INFEASIBLE:
        return BoundResult("infeasible", layout=layout)
    if st != simplex.OPTIMAL:
        return BoundResult("stalled", layout=layout)

    def result(status, z, rounds):
        x, X, eta = layout.unpack(z, model)
        value = eta if layout.has_eta else _lin_obj_value(inst, x, X)
        # Pass on only the tangent cuts that are (near) active at the final
        # point; slack ones would just bloat the LPs seeded from this result.
        keep = []
        for tag in hot:
            made = _tag_row(model, layout, tag)
            if made is None:
                continue
            a, rhs = made
            if float(a @ z) - (rhs - float(a @ layout.shift)) > -1e-6:
                keep.append(tag)
        return BoundResult(status, value + inst.objective.b, x, X, rounds,
                           layout, tuple(keep))

    max_env = 8 * layout.n
    good_z = sp.x
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        good_z = sp.x
        x, X, eta = layout.unpack(good_z, model)
        if stop_above is not None:
            value = eta if layout.has_eta else _lin_obj_value(inst, x, X)
            if value + inst.objective.b >= stop_above:
                return result("stalled", good_z, rounds)
        cuts = _separate(model, layout, good_z, x, X, tol, max_env=max_env)
        if not cuts:
            return result("optimal", good_z, rounds)
        if deadline is not None and time.monotonic() > deadline:
            break  # the LP value so far is still a valid bound
        for _viol, a, rhs, tag in cuts:
            cut_rows.append((a, rhs - float(a @ layout.shift)))
            if tag is not None:
                remember(tag)
        try:
            for _viol, a, rhs, _tag in cuts:
                sp.add_cut(a, rhs - float(a @ layout.shift))
            st = sp.dual_solve()
        except RuntimeError:
            st = simplex.STALLED  # cut capacity exhausted; re-solve clean
        if st != simplex.OPTIMAL:
            # Warm tableaus accumulate roundoff; confirm any failure against
            # a clean rebuild of the full row set before believing it.
            n_cut_capacity = max(n_cut_capacity, len(cut_rows) + 64)
            sp, st = fresh()
            if st == simplex.INFEASIBLE:
                return BoundResult("infeasible", layout=layout)
            if st != simplex.OPTIMAL:
                break
    return result("stalled", good_z, rounds)


def _lin_obj_value(inst, x, X):
    return 0.5 * float(np.sum(inst.objective.Q * X)) + float(inst.objective.c @ x)


def violated_cells(model, x, X, tol=CELL_VIOL_TOL, limit=MAX_CELLS_PER_ROUND):
    """Inactive off-diagonal cells violated at (x, X), sorted by violation."""
    n = model.n
    out = []
    for i in range(n):
        for j in range(i + 1, n):
            if (i, j) in model.active_cells:
                continue
            v = model.cell(i, j).violation(X[i, j], x[i], x[j])
            if v > tol:
                out.append((i, j, v))
    out.sort(key=lambda t: (-t[2], t[0], t[1]))
    return out[:limit]
