"""Instance data model, convexity classification, JSON serialization, LP export.

A :class:`QcqpInstance` is the single source of truth for every problem class
handled by the toolkit:

    min  1/2 x'Q0 x + c0'x
    s.t. 1/2 x'Qi x + ci'x <= bi   (or = bi)
         a_j'x = d_j
         lb <= x <= ub

Instances are immutable after construction and safe to share across threads.
"""

import io
import json
import re
from dataclasses import dataclass, field

import numpy as np

from .linalg import min_eigenvalue

EIG_TOL = 1e-9

KINDS = ("QCQP", "LCQP", "LCQP_INQ", "BOXQP", "STQP", "QCQP_NOBOUNDS")
SENSES = ("LE", "EQ", "OBJ")


class InstanceError(ValueError):
    """Malformed instance data or schema violation."""


def _sym(Q):
    Q = np.asarray(Q, dtype=float)
    return 0.5 * (Q + Q.T)


def _frozen(a):
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class QuadFunc:
    """One quadratic form 1/2 x'Qx + c'x (<=|=) b."""

    Q: np.ndarray
    c: np.ndarray
    b: float = 0.0
    sense: str = "LE"

    def __post_init__(self):
        if self.sense not in SENSES:
            raise InstanceError(f"unknown sense {self.sense!r}")
        object.__setattr__(self, "Q", _frozen(_sym(self.Q)))
        object.__setattr__(self, "c", _frozen(self.c))
        object.__setattr__(self, "b", float(self.b))
        if self.Q.ndim != 2 or self.Q.shape[0] != self.Q.shape[1]:
            raise InstanceError("Q must be square")
        if self.c.shape != (self.Q.shape[0],):
            raise InstanceError("c has wrong length")

    @property
    def n(self):
        return self.Q.shape[0]

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * float(x @ self.Q @ x) + float(self.c @ x)

    def grad(self, x):
        return self.Q @ np.asarray(x, dtype=float) + self.c

    def is_linear(self, tol=0.0):
        return bool(np.all(np.abs(self.Q) <= tol))

    def __eq__(self, other):
        if not isinstance(other, QuadFunc):
            return NotImplemented
        return (
            self.sense == other.sense
            and self.b == other.b
            and np.array_equal(self.Q, other.Q)
            and np.array_equal(self.c, other.c)
        )


@dataclass(frozen=True)
class QcqpInstance:
    """A QCQP instance together with its structural class tag."""

    n: int
    objective: QuadFunc
    constraints: tuple = ()
    lb: np.ndarray = None
    ub: np.ndarray = None
    kind: str = "QCQP"
    equality_data: tuple = ()  # tuples (a, d) of linear equality rows
    aux_count: int = 0  # trailing variables named t0.. in exports

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InstanceError(f"unknown kind {self.kind!r}")
        n = int(self.n)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "constraints", tuple(self.constraints))
        lb = self.lb if self.lb is not None else np.full(n, -np.inf)
        ub = self.ub if self.ub is not None else np.full(n, np.inf)
        object.__setattr__(self, "lb", _frozen(lb))
        object.__setattr__(self, "ub", _frozen(ub))
        eqs = tuple((_frozen(a), float(d)) for a, d in self.equality_data)
        object.__setattr__(self, "equality_data", eqs)
        self._validate()

    def _validate(self):
        n = self.n
        if self.objective.n != n:
            raise InstanceError("objective dimension mismatch")
        if self.objective.sense != "OBJ":
            raise InstanceError("objective must have sense OBJ")
        for k, g in enumerate(self.constraints):
            if g.n != n:
                raise InstanceError(f"constraint {k} dimension mismatch")
            if g.sense == "OBJ":
                raise InstanceError(f"constraint {k} cannot have sense OBJ")
        if self.lb.shape != (n,) or self.ub.shape != (n,):
            raise InstanceError("bounds have wrong length")
        if np.any(self.lb > self.ub):
            raise InstanceError("lb must not exceed ub")
        if self.kind != "QCQP_NOBOUNDS":
            if not (np.all(np.isfinite(self.lb)) and np.all(np.isfinite(self.ub))):
                raise InstanceError("bounds required: finite lb/ub for kind " + self.kind)
        for a, _ in self.equality_data:
            if a.shape != (n,):
                raise InstanceError("equality row has wrong length")
        if self.kind == "STQP":
            ok = (
                len(self.equality_data) == 1
                and np.array_equal(self.equality_data[0][0], np.ones(n))
                and self.equality_data[0][1] == 1.0
                and np.array_equal(self.lb, np.zeros(n))
                and np.array_equal(self.ub, np.ones(n))
            )
            if not ok:
                raise InstanceError("STQP requires the simplex row e'x = 1 on [0,1]^n")
        if not (0 <= self.aux_count <= n):
            raise InstanceError("aux_count out of range")

    @property
    def m(self):
        return len(self.constraints)

    def var_name(self, i):
        n_orig = self.n - self.aux_count
        return f"x{i}" if i < n_orig else f"t{i - n_orig}"

    def objective_value(self, x):
        return self.objective.value(x) + self.objective.b

    def max_violation(self, x):
        """Largest constraint/bound violation at ``x`` (0 when feasible)."""
        x = np.asarray(x, dtype=float)
        v = 0.0
        for g in self.constraints:
            r = g.value(x) - g.b
            v = max(v, r if g.sense == "LE" else abs(r))
        for a, d in self.equality_data:
            v = max(v, abs(float(a @ x) - d))
        with np.errstate(invalid="ignore"):
            v = max(v, float(np.max(self.lb - x, initial=0.0)))
            v = max(v, float(np.max(x - self.ub, initial=0.0)))
        return v

    def __eq__(self, other):
        if not isinstance(other, QcqpInstance):
            return NotImplemented
        return (
            self.n == other.n
            and self.kind == other.kind
            and self.aux_count == other.aux_count
            and self.objective == other.objective
            and self.constraints == other.constraints
            and np.array_equal(self.lb, other.lb)
            and np.array_equal(self.ub, other.ub)
            and len(self.equality_data) == len(other.equality_data)
            and all(
                np.array_equal(a, a2) and d == d2
                for (a, d), (a2, d2) in zip(self.equality_data, other.equality_data)
            )
        )


@dataclass(frozen=True)
class ConvexityTag:
    """Convexity flags for the objective and each constraint row."""

    objective_convex: bool
    flags: tuple  # "CONVEX" / "NONCONVEX" per constraint
    P: frozenset = field(default_factory=frozenset)


def classify_convexity(inst, eig_tol=EIG_TOL):
    """Tag the objective and every constraint by the sign of min-eig(Q)."""
    obj_convex = min_eigenvalue(inst.objective.Q) >= -eig_tol
    flags = []
    P = set()
    for i, g in enumerate(inst.constraints):
        if min_eigenvalue(g.Q) >= -eig_tol:
            flags.append("CONVEX")
            P.add(i)
        else:
            flags.append("NONCONVEX")
    return ConvexityTag(bool(obj_convex), tuple(flags), frozenset(P))


# --------------------------------------------------------------- JSON I/O


def _require(cond, msg, path):
    if not cond:
        raise InstanceError(f"{msg} at {path}")


def _parse_matrix(obj, n, path):
    _require(isinstance(obj, list) and len(obj) == n, f"expected {n} rows", path)
    Q = np.empty((n, n))
    for i, row in enumerate(obj):
        _require(isinstance(row, list) and len(row) == n, f"expected {n} columns", f"{path}[{i}]")
        Q[i] = [float(v) for v in row]
    for i in range(n):
        for j in range(i + 1, n):
            if Q[i, j] != Q[j, i]:
                raise InstanceError(f"matrix not symmetric at ({i},{j}) in {path}")
    return Q


def _parse_vector(obj, n, path):
    _require(isinstance(obj, list) and len(obj) == n, f"expected {n} entries", path)
    return np.array([float(v) for v in obj])


def parse_instance(data):
    """Parse a JSON document (bytes/str) into a :class:`QcqpInstance`."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise InstanceError(f"not valid JSON: {exc}") from exc
    _require(isinstance(doc, dict), "expected JSON object", "$")
    kind = doc.get("kind")
    _require(kind in KINDS, f"unknown kind {kind!r}", "$.kind")
    _require(isinstance(doc.get("n"), int) and doc["n"] >= 1, "n must be a positive integer", "$.n")
    n = doc["n"]

    obj_doc = doc.get("objective")
    _require(isinstance(obj_doc, dict), "objective required", "$.objective")
    objective = QuadFunc(
        _parse_matrix(obj_doc.get("Q"), n, "$.objective.Q"),
        _parse_vector(obj_doc.get("c"), n, "$.objective.c"),
        float(obj_doc.get("b", 0.0)),
        "OBJ",
    )

    constraints = []
    for k, c_doc in enumerate(doc.get("constraints", [])):
        path = f"$.constraints[{k}]"
        _require(isinstance(c_doc, dict), "expected object", path)
        sense = c_doc.get("sense", "LE")
        _require(sense in ("LE", "EQ"), f"unknown sense {sense!r}", path + ".sense")
        constraints.append(
            QuadFunc(
                _parse_matrix(c_doc.get("Q"), n, path + ".Q"),
                _parse_vector(c_doc.get("c"), n, path + ".c"),
                float(c_doc.get("b", 0.0)),
                sense,
            )
        )

    if kind != "QCQP_NOBOUNDS":
        _require("lb" in doc, "bounds required", "$.lb")
        _require("ub" in doc, "bounds required", "$.ub")
    lb = _parse_vector(doc["lb"], n, "$.lb") if "lb" in doc else None
    ub = _parse_vector(doc["ub"], n, "$.ub") if "ub" in doc else None

    equalities = []
    for k, e_doc in enumerate(doc.get("equalities", [])):
        path = f"$.equalities[{k}]"
        _require(isinstance(e_doc, dict), "expected object", path)
        equalities.append((_parse_vector(e_doc.get("a"), n, path + ".a"), float(e_doc.get("d", 0.0))))

    return QcqpInstance(
        n=n,
        objective=objective,
        constraints=tuple(constraints),
        lb=lb,
        ub=ub,
        kind=kind,
        equality_data=tuple(equalities),
        aux_count=int(doc.get("aux_count", 0)),
    )


def serialize_instance(inst):
    """Serialize an instance to canonical JSON bytes (round-trips exactly)."""
    doc = {
        "kind": inst.kind,
        "n": inst.n,
        "objective": {"Q": inst.objective.Q.tolist(), "c": inst.objective.c.tolist(), "b": inst.objective.b},
        "constraints": [
            {"Q": g.Q.tolist(), "c": g.c.tolist(), "b": g.b, "sense": g.sense} for g in inst.constraints
        ],
        "equalities": [{"a": a.tolist(), "d": d} for a, d in inst.equality_data],
    }
    if np.all(np.isfinite(inst.lb)):
        doc["lb"] = inst.lb.tolist()
    if np.all(np.isfinite(inst.ub)):
        doc["ub"] = inst.ub.tolist()
    if inst.aux_count:
        doc["aux_count"] = inst.aux_count
    return json.dumps(doc, indent=1).encode("utf-8")


def load_instance(path):
    with open(path, "rb") as fh:
        return parse_instance(fh.read())


def save_instance(inst, path):
    with open(path, "wb") as fh:
        fh.write(serialize_instance(inst))


# --------------------------------------------------------------- LP export


def _fmt(v):
    return f"{v:.17g}"


def _poly_terms(g, names):
    """Render 1/2 x'Qx + c'x as a list of term strings."""
    terms = []
    n = len(names)
    for i in range(n):
        if g.c[i] != 0.0:
            terms.append((g.c[i], names[i]))
    for i in range(n):
        if g.Q[i, i] != 0.0:
            terms.append((0.5 * g.Q[i, i], f"{names[i]} ^ 2"))
        for j in range(i + 1, n):
            if g.Q[i, j] != 0.0:
                terms.append((g.Q[i, j], f"{names[i]} * {names[j]}"))
    return terms


def _join_terms(terms):
    if not terms:
        return "0"
    parts = []
    for k, (coef, sym) in enumerate(terms):
        mag = abs(coef)
        body = sym if mag == 1.0 else f"{_fmt(mag)} {sym}"
        if k == 0:
            parts.append(body if coef >= 0 else f"- {body}")
        else:
            parts.append(("+ " if coef >= 0 else "- ") + body)
    return " ".join(parts)


def export_lp(inst, path):
    """Write the instance as a deterministic LP-format text model.

    Variables are named x0..x(n-1) with trailing auxiliaries t0..tm.  The
    format is write-only; :func:`read_lp` exists to round-trip it in tests.
    """
    if not np.all(np.isfinite(inst.lb)) or not np.all(np.isfinite(inst.ub)):
        raise InstanceError("export_lp requires finite bounds")
    names = [inst.var_name(i) for i in range(inst.n)]
    out = io.StringIO()
    out.write("\\ generated-by qnr-kit\n")
    out.write(f"\\ kind: {inst.kind}\n")
    out.write("Minimize\n")
    obj = _join_terms(_poly_terms(inst.objective, names))
    if inst.objective.b != 0.0:
        obj += f" + {_fmt(inst.objective.b)} const"
    out.write(f" obj: {obj}\n")
    out.write("Subject To\n")
    for k, g in enumerate(inst.constraints):
        op = "<=" if g.sense == "LE" else "="
        out.write(f" c{k}: {_join_terms(_poly_terms(g, names))} {op} {_fmt(g.b)}\n")
    for k, (a, d) in enumerate(inst.equality_data):
        lin = QuadFunc(np.zeros((inst.n, inst.n)), a, d, "EQ")
        out.write(f" e{k}: {_join_terms(_poly_terms(lin, names))} = {_fmt(d)}\n")
    out.write("Bounds\n")
    for i in range(inst.n):
        out.write(f" {_fmt(inst.lb[i])} <= {names[i]} <= {_fmt(inst.ub[i])}\n")
    out.write("End\n")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(out.getvalue())


_TERM_RE = re.compile(
    r"(?P<sign>[+-])?\s*(?P<coef>\d[\d.eE+-]*)?\s*"
    r"(?P<v1>[xt]\d+)?(?:\s*(?:\*\s*(?P<v2>[xt]\d+)|\^\s*2(?P<sq>)))?"
)


def _parse_poly(expr, index, n):
    """Parse a term string back into (Q, c, const); inverse of _join_terms."""
    Q = np.zeros((n, n))
    c = np.zeros(n)
    const = 0.0
    pos = 0
    expr = expr.strip()
    while pos < len(expr):
        m = _TERM_RE.match(expr, pos)
        if not m or m.end() == pos:
            raise InstanceError(f"cannot parse LP term near {expr[pos:pos+20]!r}")
        coef = float(m.group("coef")) if m.group("coef") else 1.0
        if m.group("sign") == "-":
            coef = -coef
        v1, v2 = m.group("v1"), m.group("v2")
        if v1 is None:
            const += coef
        elif v2 is not None:
            i, j = index[v1], index[v2]
            Q[i, j] += coef
            Q[j, i] += coef
        elif m.group("sq") is not None:
            i = index[v1]
            Q[i, i] += 2.0 * coef
        else:
            c[index[v1]] += coef
        pos = m.end()
        while pos < len(expr) and expr[pos] == " ":
            pos += 1
    return Q, c, const


def read_lp(path):
    """Re-read a file written by :func:`export_lp` (round-trip checking only)."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    kind = "QCQP"
    for ln in lines:
        if ln.startswith("\\ kind:"):
            kind = ln.split(":", 1)[1].strip()
    body = [ln for ln in lines if not ln.startswith("\\")]
    names = set()
    for ln in body:
        names.update(re.findall(r"\b[xt]\d+\b", ln))
    xs = sorted((s for s in names if s[0] == "x"), key=lambda s: int(s[1:]))
    ts = sorted((s for s in names if s[0] == "t"), key=lambda s: int(s[1:]))
    order = xs + ts
    index = {s: i for i, s in enumerate(order)}
    n = len(order)

    section = None
    objective = None
    constraints = []
    equalities = []
    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    for ln in body:
        s = ln.strip()
        if not s:
            continue
        low = s.lower()
        if low in ("minimize", "subject to", "bounds", "end"):
            section = low
            continue
        if section == "minimize":
            expr = s.split(":", 1)[1]
            expr = expr.replace(" const", "")
            Q, c, const = _parse_poly(expr, index, n)
            objective = QuadFunc(Q, c, const, "OBJ")
        elif section == "subject to":
            name, rest = s.split(":", 1)
            if "<=" in rest:
                expr, rhs = rest.rsplit("<=", 1)
                sense = "LE"
            else:
                expr, rhs = rest.rsplit("=", 1)
                sense = "EQ"
            Q, c, const = _parse_poly(expr, index, n)
            b = float(rhs) - const
            if name.strip().startswith("e"):
                equalities.append((c, b))
            else:
                constraints.append(QuadFunc(Q, c, b, sense))
        elif section == "bounds":
            lo, mid = s.split("<=", 1)
            name, hi = mid.split("<=", 1)
            i = index[name.strip()]
            lb[i] = float(lo)
            ub[i] = float(hi)
    return QcqpInstance(
        n=n,
        objective=objective,
        constraints=tuple(constraints),
        lb=lb,
        ub=ub,
        kind=kind,
        equality_data=tuple(equalities),
        aux_count=len(ts),
    )


# --------------------------------------------------------------- box scaling


@dataclass(frozen=True)
class BoxTransform:
    """Affine change of variables x = shift + scale * y mapping [0,1]^n boxes."""

    shift: np.ndarray
    scale: np.ndarray

    def to_original(self, y):
        return self.shift + self.scale * np.asarray(y, dtype=float)

    def to_scaled(self, x):
        return (np.asarray(x, dtype=float) - self.shift) / self.scale


def scale_to_unit_box(inst):
    """Rewrite the instance on [0,1]^n via x = l + (u-l) y.

    Objective values are preserved (the induced constant is carried in the
    objective's ``b`` offset).  Returns ``(scaled_instance, transform)``.
    """
    l, u = inst.lb, inst.ub
    if not (np.all(np.isfinite(l)) and np.all(np.isfinite(u))):
        raise InstanceError("scale_to_unit_box requires finite bounds")
    d = u - l
    d = np.where(d > 0, d, 1.0)
    D = np.diag(d)

    def conv(g):
        Q = D @ g.Q @ D
        c = D @ (g.Q @ l + g.c)
        const = 0.5 * float(l @ g.Q @ l) + float(g.c @ l)
        if g.sense == "OBJ":
            return QuadFunc(Q, c, g.b + const, "OBJ")
        return QuadFunc(Q, c, g.b - const, g.sense)

    eqs = tuple((d * a, dd - float(a @ l)) for a, dd in inst.equality_data)
    zero = (inst.ub == inst.lb)
    ub01 = np.where(zero, 0.0, 1.0)
    kind = inst.kind if inst.kind != "QCQP_NOBOUNDS" else "QCQP"
    if kind == "STQP" and (np.any(l != 0.0) or np.any(u != 1.0)):
        kind = "LCQP"
    scaled = QcqpInstance(
        n=inst.n,
        objective=conv(inst.objective),
        constraints=tuple(conv(g) for g in inst.constraints),
        lb=np.zeros(inst.n),
        ub=ub01,
        kind=kind,
        equality_data=eqs,
        aux_count=inst.aux_count,
    )
    return scaled, BoxTransform(_frozen(l), _frozen(d))
