"""Deterministic benchmark instance families.

All randomness comes from a fixed 64-bit stream: the seed passes through a
splitmix64 scrambler into xoshiro256**, uniforms use the top 53 bits, and
permutations are Fisher-Yates on the same stream.  Draw order is documented
per family, so identical (family, n, m, density, seed) inputs give
bit-identical instances on any platform.
"""

from dataclasses import dataclass

import numpy as np

from .core import QcqpInstance, QuadFunc

MASK64 = (1 << 64) - 1

# The fixed 5x5 +-1 block with simplex-quadratic minimum zero.
HORN = np.array(
    [
        [1.0, -1.0, 1.0, 1.0, -1.0],
        [-1.0, 1.0, -1.0, 1.0, 1.0],
        [1.0, -1.0, 1.0, -1.0, 1.0],
        [1.0, 1.0, -1.0, 1.0, -1.0],
        [-1.0, 1.0, 1.0, -1.0, 1.0],
    ]
)

FAMILIES = ("HARD_STQP", "LCQP_INQ", "QCQP_RANDOM", "BOXQP_DENSITY")


@dataclass(frozen=True)
class GenConfig:
    family: str
    n: int
    m: int = 0
    density: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if not 0.0 < self.density <= 1.0:
            raise ValueError("density must lie in (0, 1]")


def _splitmix64(state):
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


class Stream:
    """xoshiro256** seeded through splitmix64."""

    def __init__(self, seed):
        s = int(seed) & MASK64
        state = []
        for _ in range(4):
            s, z = _splitmix64(s)
            state.append(z)
        self.s = state

    @staticmethod
    def _rotl(x, k):
        return ((x << k) | (x >> (64 - k))) & MASK64

    def next64(self):
        s = self.s
        result = (self._rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = self._rotl(s[3], 45)
        return result

    def uniform(self, lo=0.0, hi=1.0):
        u = (self.next64() >> 11) * (2.0 ** -53)
        return lo + (hi - lo) * u

    def uniform_vec(self, k, lo=0.0, hi=1.0):
        return np.array([self.uniform(lo, hi) for _ in range(k)])

    def uniform_int(self, lo, hi):
        """Integer uniform on [lo, hi] inclusive via 53-bit scaling."""
        span = hi - lo + 1
        return lo + int((self.next64() >> 11) * (2.0 ** -53) * span)

    def permutation(self, k):
        """Fisher-Yates; position i swaps with a draw from [0, i]."""
        p = list(range(k))
        for i in range(k - 1, 0, -1):
            j = self.uniform_int(0, i)
            p[i], p[j] = p[j], p[i]
        return np.array(p)

    def symmetric(self, k, lo, hi):
        """Row-major upper triangle including diagonal, mirrored."""
        M = np.zeros((k, k))
        for i in range(k):
            for j in range(i, k):
                M[i, j] = M[j, i] = self.uniform(lo, hi)
        return M


def gen_hard_stqp(n, seed, identity_override=False):
    """Hard simplex QP: a scrambled Horn block padded with a convex part.

    Draw order: V ((n-5)^2, row-major), C ((n-5)x5, row-major), D diagonal
    (n), then the permutation.  ``identity_override`` skips the D and J draws
    and uses identity matrices; at n = 5 this makes Q equal the Horn block
    exactly.
    """
    if n < 5:
        raise ValueError("hard StQP needs n >= 5")
    rng = Stream(seed)
    k = n - 5
    V = np.array([[rng.uniform(-50.0, 50.0) for _ in range(k)] for _ in range(k)])
    C = np.array([[rng.uniform(0.0, 1.0) for _ in range(5)] for _ in range(k)]).reshape(k, 5)
    Qhat = np.zeros((n, n))
    Qhat[:k, :k] = V @ V.T
    Qhat[:k, k:] = C
    Qhat[k:, :k] = C.T
    Qhat[k:, k:] = HORN
    if identity_override:
        Q = Qhat
    else:
        D = np.diag(rng.uniform_vec(n, 0.0, 1.0))
        perm = rng.permutation(n)
        J = np.eye(n)[perm]
        Q = J @ D @ Qhat @ D @ J.T
    Q = 0.5 * (Q + Q.T)
    return QcqpInstance(
        n=n,
        objective=QuadFunc(Q, np.zeros(n), 0.0, "OBJ"),
        constraints=(),
        lb=np.zeros(n),
        ub=np.ones(n),
        kind="STQP",
        equality_data=((np.ones(n), 1.0),),
    )


def gen_lcqp_inq(n, m, seed):
    """Inequality-constrained QP on the unit box.

    Draw order: Q (upper triangle row-major), c, then per row i: a_i (n
    entries), r_i.  Every instance is feasible at x = 0.2 e.
    """
    rng = Stream(seed)
    Q = rng.symmetric(n, -10.0, 10.0)
    c = rng.uniform_vec(n, -10.0, 10.0)
    rows = []
    for _ in range(m):
        a = rng.uniform_vec(n, 0.0, 10.0)
        r = rng.uniform(0.2, 0.4)
        d = r * float(a.sum())
        rows.append(QuadFunc(np.zeros((n, n)), a, d, "LE"))
    return QcqpInstance(
        n=n,
        objective=QuadFunc(Q, c, 0.0, "OBJ"),
        constraints=tuple(rows),
        lb=np.zeros(n),
        ub=np.ones(n),
        kind="LCQP_INQ",
    )


def _recompose(rng, n, lo, hi):
    """Sample a symmetric matrix, keep its eigenvectors, resample the spectrum."""
    from .linalg import eigh_jacobi

    Qhat = rng.symmetric(n, -10.0, 10.0)
    dec = eigh_jacobi(Qhat)
    d = rng.uniform_vec(n, lo, hi)
    return (dec.vectors * d) @ dec.vectors.T


def gen_qcqp_random(n, m, seed, max_restarts=100):
    """Random QCQP with convex objective, nonconvex rows, and a ball row.

    Draw order per attempt: objective base matrix (upper triangle), objective
    spectrum [1, 20]; then per row i = 1..m-1: base matrix, spectrum
    [-10, 10], c_i, b_i; then rejection-sampling draws.  Feasibility is
    checked by sampling points in the ball; an attempt with no feasible point
    among 2000 draws is discarded and the instance redrawn.
    """
    if m < 2:
        raise ValueError("need m >= 2 (sampled rows plus the ball row)")
    rng = Stream(seed)
    radius = np.sqrt(1000.0)
    for _ in range(max_restarts):
        Q0 = _recompose(rng, n, 1.0, 20.0)
        cons = []
        for _i in range(1, m):
            Qi = _recompose(rng, n, -10.0, 10.0)
            ci = rng.uniform_vec(n, -10.0, 10.0)
            bi = rng.uniform(-10.0, -1.0)
            cons.append(QuadFunc(Qi, ci, bi, "LE"))
        cons.append(QuadFunc(2.0 * np.eye(n), np.zeros(n), 1000.0, "LE"))
        inst = QcqpInstance(
            n=n,
            objective=QuadFunc(Q0, np.zeros(n), 0.0, "OBJ"),
            constraints=tuple(cons),
            lb=np.full(n, -np.inf),
            ub=np.full(n, np.inf),
            kind="QCQP_NOBOUNDS",
        )
        for _draw in range(2000):
            x = rng.uniform_vec(n, -radius, radius)
            if float(x @ x) <= 1000.0 and all(
                g.value(x) <= g.b + 1e-12 for g in cons[:-1]
            ):
                return inst
    raise RuntimeError(f"no feasible QCQP instance found after {max_restarts} restarts")


def gen_boxqp(n, density, seed):
    """Dense-or-sparse integer BoxQP on the unit box.

    Draw order: diagonal of Q (n integers), then upper off-diagonal pairs
    row-major (one keep/drop uniform each, a value draw only when kept),
    then c (n integers).  Entries are integers on [-50, 50].
    """
    if not 0.0 < density <= 1.0:
        raise ValueError("density must lie in (0, 1]")
    rng = Stream(seed)
    Q = np.zeros((n, n))
    for i in range(n):
        Q[i, i] = rng.uniform_int(-50, 50)
    for i in range(n):
        for j in range(i + 1, n):
            if rng.uniform() < density:
                Q[i, j] = Q[j, i] = rng.uniform_int(-50, 50)
    c = np.array([float(rng.uniform_int(-50, 50)) for _ in range(n)])
    return QcqpInstance(
        n=n,
        objective=QuadFunc(Q, c, 0.0, "OBJ"),
        constraints=(),
        lb=np.zeros(n),
        ub=np.ones(n),
        kind="BOXQP",
    )


def generate(config):
    """Dispatch on a GenConfig."""
    if config.family == "HARD_STQP":
        return gen_hard_stqp(config.n, config.seed)
    if config.family == "LCQP_INQ":
        return gen_lcqp_inq(config.n, config.m, config.seed)
    if config.family == "QCQP_RANDOM":
        return gen_qcqp_random(config.n, config.m, config.seed)
    return gen_boxqp(config.n, config.density, config.seed)
