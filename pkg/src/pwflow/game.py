"""Payoff matrices, best responses, transversality and Nash equilibria.

Conventions: player P picks rows and maximizes ``p' M q``; player Q picks
columns and minimizes it.  Index sets exposed to callers are 1-based,
arrays are 0-based internally.
"""
from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from . import arith

log = logging.getLogger(__name__)

P, Q = "P", "Q"

EPS_TIE = 1e-10
EPS_SIMPLEX = 1e-12
EPS_EQ = 1e-9


class GameError(ValueError):
    """Invalid game input (shape, NaN entry, dimension mismatch)."""


class NoEquilibriumError(RuntimeError):
    """Support enumeration found nothing; existence is guaranteed so this
    signals numerical trouble."""


class GameMatrix:
    """An ``m x n`` payoff matrix in exact (Fraction) or float mode."""

    def __init__(self, entries, exact: Optional[bool] = None):
        raw = np.asarray(entries, dtype=object)
        if raw.ndim != 2:
            raise GameError("payoff matrix must be two-dimensional")
        if exact is None:
            exact = all(isinstance(v, (int, Fraction, str, np.integer))
                        for v in raw.ravel())
        self.exact = bool(exact)
        self.entries = arith.as_array(raw, self.exact)
        m, n = self.entries.shape
        if m < 2 or n < 2:
            raise GameError(f"need at least 2x2, got {m}x{n}")
        if not self.exact and not np.all(np.isfinite(self.entries)):
            raise GameError("payoff entries must be finite")
        self.entries.setflags(write=False)

    @property
    def shape(self):
        return self.entries.shape

    @property
    def rows(self) -> int:
        return self.entries.shape[0]

    @property
    def cols(self) -> int:
        return self.entries.shape[1]

    def vec(self, values) -> np.ndarray:
        """Coerce a vector into this matrix's arithmetic mode."""
        return arith.as_array(values, self.exact)

    def as_exact(self) -> "GameMatrix":
        return self if self.exact else GameMatrix(self.entries, exact=True)

    def as_float(self) -> "GameMatrix":
        return GameMatrix(arith.to_float(self.entries), exact=False) if self.exact else self

    def to_json(self) -> dict:
        if self.exact:
            ent = [[str(v) for v in row] for row in self.entries]
        else:
            ent = self.entries.tolist()
        return {"rows": self.rows, "cols": self.cols, "entries": ent}

    @classmethod
    def from_json(cls, data: dict, exact: Optional[bool] = None) -> "GameMatrix":
        ent = data["entries"]
        if len(ent) != data.get("rows", len(ent)) or \
                any(len(r) != data.get("cols", len(ent[0])) for r in ent):
            raise GameError("entries do not match declared rows/cols")
        return cls(ent, exact=exact)

    def __repr__(self):
        mode = "exact" if self.exact else "float"
        return f"GameMatrix({self.rows}x{self.cols}, {mode})"

    def __eq__(self, other):
        return isinstance(other, GameMatrix) and self.exact == other.exact \
            and self.shape == other.shape and bool(np.all(self.entries == other.entries))

    def __hash__(self):
        return hash((self.exact, self.shape, tuple(map(str, self.entries.ravel()))))


def shapley_matrix(beta=Fraction(618, 1000), exact: bool = True) -> GameMatrix:
    """The 3x3 cyclic family ``B(beta)`` with ``det B = 1 + beta^3``."""
    b = arith.to_scalar(beta, exact)
    one, zero = arith.to_scalar(1, exact), arith.to_scalar(0, exact)
    return GameMatrix([[one, zero, b], [b, one, zero], [zero, b, one]], exact=exact)


@dataclass(frozen=True)
class SimplexPoint:
    coords: np.ndarray
    side: str

    def __post_init__(self):
        if self.side not in (P, Q):
            raise GameError(f"side must be 'P' or 'Q', got {self.side!r}")
        c = self.coords
        exact = arith.is_exact(c)
        total = sum(c) if exact else float(np.sum(c))
        if exact:
            ok = all(v >= 0 for v in c) and total == 1
        else:
            ok = np.all(c >= -EPS_SIMPLEX) and abs(total - 1) <= EPS_SIMPLEX * len(c)
        if not ok:
            raise GameError(f"not a probability vector: {c}")


@dataclass(frozen=True)
class BestResponseSet:
    side: str
    support: tuple  # sorted, 1-based

    @property
    def cardinality(self) -> int:
        return len(self.support)

    @property
    def single_valued(self) -> bool:
        return len(self.support) == 1


@dataclass(frozen=True)
class NashEquilibrium:
    p_bar: np.ndarray
    q_bar: np.ndarray
    lam: object
    mu: object
    support_p: tuple  # 1-based
    support_q: tuple
    completely_mixed: bool

    @property
    def value(self):
        return self.lam

    def to_json(self) -> dict:
        conv = (lambda v: str(v)) if arith.is_exact(self.p_bar) else float
        return {"p_bar": [conv(v) for v in self.p_bar],
                "q_bar": [conv(v) for v in self.q_bar],
                "lambda": conv(self.lam), "mu": conv(self.mu),
                "support_p": list(self.support_p), "support_q": list(self.support_q),
                "completely_mixed": self.completely_mixed}


@dataclass
class TransversalityReport:
    assumption1_ok: bool
    assumption2_ok: bool
    failing_minors: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"assumption1_ok": self.assumption1_ok,
                "assumption2_ok": self.assumption2_ok,
                "failing_minors": [{"rows": list(r), "cols": list(c), "variant": v}
                                   for r, c, v in self.failing_minors]}


def _coords(x):
    return x.coords if isinstance(x, SimplexPoint) else x


def tie_set(values: np.ndarray, best, mode: str, eps: float = EPS_TIE) -> list:
    """0-based indices attaining the max (``mode='max'``) or min.

    ``best`` is the attained extreme.  Exact arrays compare exactly; float
    arrays use a tolerance relative to the vector's magnitude.
    """
    if arith.is_exact(values):
        return [i for i, v in enumerate(values) if v == best]
    scale = max(1e-300, float(np.max(np.abs(values))))
    return [i for i, v in enumerate(values) if abs(v - best) <= eps * scale]


def best_response(M: GameMatrix, x, side: str, eps_tie: float = EPS_TIE) -> BestResponseSet:
    """Support of ``BR_p(q)`` (side P, argmax of ``Mq``) or ``BR_q(p)``."""
    x = M.vec(_coords(x))
    if side == P:
        if x.shape != (M.cols,):
            raise GameError(f"q must have length {M.cols}")
        v = M.entries @ x
        best = max(v)
        idx = tie_set(v, best, "max", eps_tie)
    elif side == Q:
        if x.shape != (M.rows,):
            raise GameError(f"p must have length {M.rows}")
        v = x @ M.entries
        best = min(v)
        idx = tie_set(v, best, "min", eps_tie)
    else:
        raise GameError(f"unknown side {side!r}")
    if not M.exact and np.any(np.isnan(v)):
        raise GameError("NaN in payoff evaluation")
    return BestResponseSet(side, tuple(i + 1 for i in idx))


def hamiltonian_value(M: GameMatrix, p, q):
    """Duality gap ``max_i (Mq)_i - min_j (p'M)_j``."""
    p, q = M.vec(_coords(p)), M.vec(_coords(q))
    if p.shape != (M.rows,) or q.shape != (M.cols,):
        raise GameError("dimension mismatch")
    return max(M.entries @ q) - min(p @ M.entries)


def _is_zero(d, sub: np.ndarray, exact: bool) -> bool:
    if exact:
        return d == 0
    # relative to the Hadamard bound of the submatrix
    bound = float(np.prod(np.linalg.norm(sub, axis=1)))
    return abs(d) <= 1e-12 * max(bound, 1e-300)


def _minor_failures(a: np.ndarray, exact: bool, r_min: int, variant: str,
                    row_labels, col_labels, first_only: bool) -> list:
    out = []
    m, n = a.shape
    for r in range(r_min, min(m, n) + 1):
        for rows in itertools.combinations(range(m), r):
            for cols in itertools.combinations(range(n), r):
                sub = a[np.ix_(rows, cols)]
                if _is_zero(arith.det(sub), sub, exact):
                    out.append((tuple(row_labels[i] for i in rows),
                                tuple(col_labels[j] for j in cols), variant))
                    if first_only:
                        return out
    return out


def check_transversality(M: GameMatrix, exhaustive: bool = False) -> TransversalityReport:
    """Check both minor conditions.

    Assumption 1: every ``r x r`` minor of ``M`` with ``r >= 2`` is non-zero.
    Assumption 2: every minor of every row-differenced matrix (one row
    subtracted from the others) and column-differenced matrix is non-zero.
    Witness labels are 1-based; for differenced matrices the row (column)
    label is the original index of the minuend.
    """
    a, exact = M.entries, M.exact
    m, n = a.shape
    rows1, cols1 = list(range(1, m + 1)), list(range(1, n + 1))
    first = not exhaustive
    fail1 = _minor_failures(a, exact, 2, "M", rows1, cols1, first)
    fail2 = []
    for k in range(m):
        keep = [i for i in range(m) if i != k]
        diff = a[keep] - a[k]
        fail2 += _minor_failures(diff, exact, 1, f"row-diff {k + 1}",
                                 [i + 1 for i in keep], cols1, first)
        if fail2 and first:
            break
    if not (fail2 and first):
        for k in range(n):
            keep = [j for j in range(n) if j != k]
            diff = a[:, keep] - a[:, [k]]
            fail2 += _minor_failures(diff, exact, 1, f"col-diff {k + 1}",
                                     rows1, [j + 1 for j in keep], first)
            if fail2 and first:
                break
    return TransversalityReport(not fail1, not fail2, fail1 + fail2)


class SingularGameError(GameError):
    pass


def solve_completely_mixed(M: GameMatrix) -> Optional[NashEquilibrium]:
    """Interior equilibrium from ``p'M = lam 1'`` and ``Mq = mu 1``.

    Returns None when the normalized solution has a non-positive component.
    """
    if M.rows != M.cols:
        raise GameError("completely mixed solve needs a square matrix")
    n = M.rows
    a = M.entries
    one = arith.ones(n, M.exact)
    try:
        u = arith.solve(a.T, one)   # p_bar / lam
        w = arith.solve(a, one)     # q_bar / mu
    except arith.SingularMatrixError as exc:
        raise SingularGameError("payoff matrix is singular") from exc
    su, sw = sum(u), sum(w)
    if (su == 0 or sw == 0) if M.exact else (abs(su) < 1e-300 or abs(sw) < 1e-300):
        return None
    p_bar, q_bar = u / su, w / sw
    if any(v <= 0 for v in p_bar) or any(v <= 0 for v in q_bar):
        return None
    lam = 1 / su
    mu = 1 / sw
    full = tuple(range(1, n + 1))
    return NashEquilibrium(p_bar, q_bar, lam, mu, full, full, True)


def _restricted_solve(sub: np.ndarray, exact: bool):
    """Solve ``x' sub = v 1'``, ``1'x = 1``; returns (x, v) or None."""
    r = sub.shape[0]
    a = arith.zeros((r + 1, r + 1), exact)
    a[:r, :r] = sub.T
    a[:r, r] = -arith.ones(r, exact)
    a[r, :r] = arith.ones(r, exact)
    rhs = arith.zeros(r + 1, exact)
    rhs[r] = arith.to_scalar(1, exact)
    try:
        sol = arith.solve(a, rhs)
    except arith.SingularMatrixError:
        return None
    return sol[:r], sol[r]


def solve_nash(M: GameMatrix, check: bool = True, tol: float = 1e-12) -> NashEquilibrium:
    """Equal-size support enumeration (sizes ``min(m, n)`` down to 1).

    Exponential in the size; intended for ``n <= 6``.
    """
    if check:
        rep = check_transversality(M)
        if not (rep.assumption1_ok and rep.assumption2_ok):
            warnings.warn(f"transversality fails for {M!r}: {rep.failing_minors[:1]}",
                          RuntimeWarning, stacklevel=2)
    a, exact = M.entries, M.exact
    m, n = a.shape
    found = []
    for r in range(min(m, n), 0, -1):
        for rows in itertools.combinations(range(m), r):
            for cols in itertools.combinations(range(n), r):
                sub = a[np.ix_(rows, cols)]
                ps = _restricted_solve(sub, exact)
                qs = _restricted_solve(sub.T, exact)
                if ps is None or qs is None:
                    continue
                (pr, lam), (qr, mu) = ps, qs
                if exact:
                    if any(v <= 0 for v in pr) or any(v <= 0 for v in qr):
                        continue
                elif np.any(pr <= tol) or np.any(qr <= tol):
                    continue
                p = arith.zeros(m, exact)
                q = arith.zeros(n, exact)
                p[list(rows)] = pr
                q[list(cols)] = qr
                row_pay = p @ a    # Q minimizes: all columns must be >= lam
                col_pay = a @ q    # P maximizes: all rows must be <= mu
                if exact:
                    ok = all(v >= lam for v in row_pay) and all(v <= mu for v in col_pay)
                else:
                    s = max(1.0, float(np.max(np.abs(a))))
                    ok = np.all(row_pay >= lam - 1e-9 * s) and np.all(col_pay <= mu + 1e-9 * s)
                if ok:
                    found.append(NashEquilibrium(
                        p, q, lam, mu, tuple(i + 1 for i in rows),
                        tuple(j + 1 for j in cols), r == m == n))
    if not found:
        raise NoEquilibriumError(f"support enumeration found no equilibrium for {M!r}")
    if len(found) > 1:
        log.warning("degenerate game: %d equilibria found, returning the first", len(found))
    return found[0]


def brute_force_value(M: GameMatrix, resolution: int = 100) -> float:
    """Max-min value over a simplex grid; an independent check for 2xN games.

    For ``m == 2`` the row player's simplex is gridded with ``resolution**2``
    points (``10^4`` at the default) and the inner minimum is over pure
    columns, which is exact for a fixed row mixture.
    """
    a = arith.to_float(M.entries)
    if a.shape[0] != 2:
        raise GameError("grid oracle implemented for two-row games")
    t = np.linspace(0.0, 1.0, resolution * resolution)
    pay = np.outer(t, a[0]) + np.outer(1 - t, a[1])
    return float(np.max(np.min(pay, axis=1)))


def random_transversal_game(rng: np.random.Generator, m: int = 3, n: Optional[int] = None,
                            exact: bool = False, denominator: int = 97) -> GameMatrix:
    """Random matrix passing both transversality assumptions.

    In exact mode entries are random fractions ``k / denominator``.
    """
    n = m if n is None else n
    while True:
        if exact:
            ent = [[Fraction(int(rng.integers(-denominator, denominator + 1)), denominator)
                    for _ in range(n)] for _ in range(m)]
        else:
            ent = rng.uniform(-1.0, 1.0, size=(m, n))
        g = GameMatrix(ent, exact=exact)
        rep = check_transversality(g)
        if rep.assumption1_ok and rep.assumption2_ok:
            return g


def support_sets(eq: NashEquilibrium) -> tuple:
    """0-based supports of an equilibrium."""
    return tuple(i - 1 for i in eq.support_p), tuple(j - 1 for j in eq.support_q)


def index_tuple(indices: Sequence[int]) -> tuple:
    """0-based -> sorted 1-based tuple."""
    return tuple(sorted(i + 1 for i in indices))
