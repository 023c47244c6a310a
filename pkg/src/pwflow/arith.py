"""Scalar plumbing for the two arithmetic modes.

Exact mode stores ``fractions.Fraction`` values in numpy ``object`` arrays so
the usual ``@``/``+``/comparison operators stay exact.  Float mode is plain
``float64``.  Exact linear algebra is delegated to sympy and converted back.
"""
from __future__ import annotations

from fractions import Fraction
from numbers import Rational

import numpy as np
import sympy

__all__ = [
    "to_scalar", "as_array", "is_exact", "zeros", "ones", "eye", "unit",
    "to_float", "SingularMatrixError", "det", "solve", "rank", "nullspace",
    "solve_consistent",
]


class SingularMatrixError(np.linalg.LinAlgError):
    """A linear system had no unique solution."""


def to_scalar(value, exact: bool):
    if exact:
        if isinstance(value, Fraction):
            return value
        if isinstance(value, str):
            return Fraction(value.strip())
        if isinstance(value, (Rational, int, np.integer)):
            return Fraction(int(value.numerator), int(value.denominator)) \
                if isinstance(value, Rational) else Fraction(int(value))
        if isinstance(value, sympy.Rational):
            return Fraction(int(value.p), int(value.q))
        # floats are converted exactly (binary value), never rounded
        return Fraction(float(value))
    if isinstance(value, str):
        return float(Fraction(value.strip()))
    return float(value)


def as_array(values, exact: bool) -> np.ndarray:
    arr = np.asarray(values, dtype=object if exact else None)
    if not exact:
        if arr.dtype == object:
            arr = np.vectorize(lambda v: to_scalar(v, False), otypes=[float])(arr)
        return np.array(arr, dtype=float)
    out = np.empty(arr.shape, dtype=object)
    for idx, v in np.ndenumerate(arr):
        out[idx] = to_scalar(v, True)
    return out


def is_exact(arr) -> bool:
    return isinstance(arr, np.ndarray) and arr.dtype == object


def zeros(shape, exact: bool) -> np.ndarray:
    if exact:
        out = np.empty(shape, dtype=object)
        out.fill(Fraction(0))
        return out
    return np.zeros(shape)


def ones(shape, exact: bool) -> np.ndarray:
    if exact:
        out = np.empty(shape, dtype=object)
        out.fill(Fraction(1))
        return out
    return np.ones(shape)


def eye(n: int, exact: bool) -> np.ndarray:
    out = zeros((n, n), exact)
    for i in range(n):
        out[i, i] = Fraction(1) if exact else 1.0
    return out


def unit(n: int, i: int, exact: bool) -> np.ndarray:
    out = zeros(n, exact)
    out[i] = Fraction(1) if exact else 1.0
    return out


def to_float(arr) -> np.ndarray:
    return np.asarray(arr, dtype=float) if not is_exact(arr) else \
        np.array([float(v) for v in np.ravel(arr)]).reshape(np.shape(arr))


def _to_sympy(a: np.ndarray) -> sympy.Matrix:
    a = np.atleast_2d(a)
    return sympy.Matrix(a.shape[0], a.shape[1],
                        [sympy.Rational(v.numerator, v.denominator) for v in a.ravel()])


def _from_sympy(m: sympy.Matrix) -> np.ndarray:
    out = np.empty(m.shape, dtype=object)
    for i in range(m.shape[0]):
        for j in range(m.shape[1]):
            out[i, j] = to_scalar(m[i, j], True)
    return out


def det(a: np.ndarray):
    if is_exact(a):
        if a.shape[0] == 0:
            return Fraction(1)
        return to_scalar(_to_sympy(a).det(method="bareiss"), True)
    return float(np.linalg.det(a)) if a.shape[0] else 1.0


def solve(a: np.ndarray, b: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Solve a square system; raises SingularMatrixError when singular."""
    if is_exact(a):
        sa = _to_sympy(a)
        if sa.det(method="bareiss") == 0:
            raise SingularMatrixError("singular system")
        vec = np.ndim(b) == 1
        sb = _to_sympy(np.reshape(b, (-1, 1)) if vec else b)
        x = _from_sympy(sa.LUsolve(sb))
        return x[:, 0] if vec else x
    a = np.asarray(a, dtype=float)
    if a.size and np.linalg.cond(a) > 1.0 / tol:
        raise SingularMatrixError("ill-conditioned or singular system")
    return np.linalg.solve(a, b)


def rank(a: np.ndarray, tol: float = 1e-10) -> int:
    if is_exact(a):
        return int(_to_sympy(a).rank())
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return 0
    s = np.linalg.svd(a, compute_uv=False)
    return int(np.sum(s > tol * max(1.0, s[0])))


def nullspace(a: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Columns spanning the kernel of ``a``."""
    if is_exact(a):
        vecs = _to_sympy(a).nullspace()
        if not vecs:
            return zeros((a.shape[1], 0), True)
        return _from_sympy(sympy.Matrix.hstack(*vecs))
    a = np.asarray(a, dtype=float)
    _, s, vt = np.linalg.svd(a)
    r = int(np.sum(s > tol * max(1.0, s[0] if s.size else 1.0)))
    return vt[r:].T


def solve_consistent(a: np.ndarray, b: np.ndarray, tol: float = 1e-9):
    """Unique solution of a possibly overdetermined system.

    Returns ``(x, residual)``.  Raises SingularMatrixError if the solution is
    not unique (column rank deficient).  The caller judges the residual; in
    exact mode it is an exact Fraction.
    """
    if is_exact(a):
        sa, sb = _to_sympy(a), _to_sympy(np.reshape(b, (-1, 1)))
        if sa.rank() < sa.shape[1]:
            raise SingularMatrixError("rank deficient system")
        ata = sa.T * sa
        x = _from_sympy(ata.LUsolve(sa.T * sb))[:, 0]
        r = a @ x - b
        return x, max((abs(v) for v in r), default=Fraction(0))
    a = np.asarray(a, dtype=float)
    x, _, rk, s = np.linalg.lstsq(a, b, rcond=None)
    if rk < a.shape[1] or (s.size and s[-1] <= 1e-12 * s[0]):
        raise SingularMatrixError("rank deficient system")
    r = a @ x - b
    return x, float(np.max(np.abs(r))) if r.size else 0.0
