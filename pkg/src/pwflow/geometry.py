"""Symplectic structure of the duality-gap Hamiltonian.

The symplectic form is ``sum_ij a_ij dp_i ^ dq_j`` for an invertible ``A``.
``P_p`` projects onto the tangent space of the simplex along ``A'^{-1} 1``
and ``P_q`` along ``A^{-1} 1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import arith
from .game import (GameError, GameMatrix, NashEquilibrium, P, Q, best_response,
                   hamiltonian_value)

EPS_DET = 1e-12
EPS_LEVEL = 1e-10


class ProjectionError(ValueError):
    pass


@dataclass(frozen=True)
class SymplecticForm:
    A: np.ndarray

    def __post_init__(self):
        a = self.A
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ProjectionError("A must be square")
        d = arith.det(a)
        if arith.is_exact(a):
            if d == 0:
                raise ProjectionError("A is singular")
        else:
            scale = float(np.prod(np.linalg.norm(a, axis=1)))
            if abs(d) <= EPS_DET * max(scale, 1e-300):
                raise ProjectionError("A is singular")

    @classmethod
    def from_game(cls, M: GameMatrix) -> "SymplecticForm":
        return cls(M.entries)


@dataclass(frozen=True)
class ProjectionPair:
    P_p: np.ndarray
    P_q: np.ndarray


def _inverses(A: np.ndarray):
    n = A.shape[0]
    exact = arith.is_exact(A)
    I = arith.eye(n, exact)
    try:
        Ainv = arith.solve(A, I)
        Atinv = arith.solve(A.T, I)
    except arith.SingularMatrixError as exc:
        raise ProjectionError("A is singular") from exc
    return Ainv, Atinv


def build_projections(form: SymplecticForm) -> ProjectionPair:
    """``P v = v - (1'v / 1'A^{-1}1) d`` with ``d`` the kernel direction."""
    A = form.A
    n = A.shape[0]
    exact = arith.is_exact(A)
    Ainv, Atinv = _inverses(A)
    one = arith.ones(n, exact)
    c = one @ Ainv @ one
    if (c == 0) if exact else abs(c) <= EPS_DET * max(1.0, float(np.max(np.abs(Ainv)))):
        raise ProjectionError("1' A^{-1} 1 vanishes: projection along A^{-1}1 undefined")
    I = arith.eye(n, exact)
    P_p = I - np.outer(Atinv @ one, one) / c
    P_q = I - np.outer(Ainv @ one, one) / c
    return ProjectionPair(P_p, P_q)


def symplectic_operators(form: SymplecticForm):
    """The pair ``(P_p A'^{-1}, P_q A^{-1})`` used by the vector field."""
    proj = build_projections(form)
    Ainv, Atinv = _inverses(form.A)
    return proj.P_p @ Atinv, proj.P_q @ Ainv


def verify_symplectic_identity(form: SymplecticForm):
    """Max-abs deviation of ``(P_p A'^{-1})' - P_q A^{-1}``.

    This transpose relation between the p-side and q-side operators is what
    makes ``M Y = X' M`` hold for the Hamiltonian choice of ``X, Y``.
    """
    Lp, Lq = symplectic_operators(form)
    dev = np.abs(Lp.T - Lq)
    return max(dev.ravel()) if arith.is_exact(form.A) else float(np.max(dev))


def hamiltonian_vector_field(M: GameMatrix, form: SymplecticForm, p, q) -> list:
    """Vertices ``(P_p A'^{-1} M' e_i, P_q A^{-1} M e_j)`` of the velocity set.

    ``i`` ranges over ``BR_p(q)`` and ``j`` over ``BR_q(p)``; the inclusion's
    value is the convex hull of the returned pairs.
    """
    if M.rows != M.cols or form.A.shape != M.shape:
        raise GameError("vector field needs square M and matching A")
    Lp, Lq = symplectic_operators(form)
    Xp = Lp @ M.entries.T
    Yq = Lq @ M.entries
    br_p = best_response(M, q, P)
    br_q = best_response(M, p, Q)
    return [(Xp[:, i - 1], Yq[:, j - 1]) for i in br_p.support for j in br_q.support]


@dataclass(frozen=True)
class LevelSetPoint:
    p: np.ndarray
    q: np.ndarray
    rho: object


def _ray_parameter(M: GameMatrix, eq: NashEquilibrium, u, v, rho):
    """Smallest ``c > 0`` with ``H(p_bar + c u, q_bar + c v) = rho``.

    Along the ray ``H`` is the maximum over pairs ``(i, j)`` of the affine
    functions ``(Mq)_i - (p'M)_j``; it starts at 0 and the first pair to
    reach ``rho`` fixes the solution, so it is a closed form over breakpoints.
    """
    a = M.entries
    a0, a1 = a @ eq.q_bar, a @ v
    b0, b1 = eq.p_bar @ a, u @ a
    best = None
    for i in range(len(a0)):
        for j in range(len(b0)):
            slope = a1[i] - b1[j]
            if slope > 0:
                c = (rho - (a0[i] - b0[j])) / slope
                if best is None or c < best:
                    best = c
    return best


def project_to_level_set(M: GameMatrix, eq: NashEquilibrium, p, q, rho,
                         require_simplex: bool = True) -> LevelSetPoint:
    """Radial projection from the equilibrium onto ``H = rho``.

    With ``require_simplex`` the image must lie in the product of simplices,
    otherwise ``rho`` is too large; level sets used for the example flows
    live in the affine hulls and pass ``require_simplex=False``.
    """
    exact = M.exact
    p, q = M.vec(getattr(p, "coords", p)), M.vec(getattr(q, "coords", q))
    rho = arith.to_scalar(rho, exact)
    if rho <= 0:
        raise ProjectionError("rho must be positive")
    u, v = p - eq.p_bar, q - eq.q_bar
    if exact:
        degenerate = all(x == 0 for x in u) and all(x == 0 for x in v)
    else:
        degenerate = max(np.max(np.abs(u)), np.max(np.abs(v))) == 0.0
    if degenerate:
        raise ProjectionError("projection undefined at the equilibrium")
    h = hamiltonian_value(M, p, q)
    if h == rho:
        return LevelSetPoint(p, q, rho)
    c = _ray_parameter(M, eq, u, v, rho)
    if c is None:
        raise ProjectionError("ray does not reach the level set")
    pp, qq = eq.p_bar + c * u, eq.q_bar + c * v
    if require_simplex:
        tol = 0 if exact else 1e-12
        if any(x < -tol for x in pp) or any(x < -tol for x in qq):
            raise ProjectionError("rho too large: projection leaves the simplices")
    return LevelSetPoint(pp, qq, rho)
