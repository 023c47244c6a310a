"""Event-driven integration of the generalized best-response inclusion.

The inclusion is ``dp/dt in X BR_p(q) + alpha p_bar - p`` and
``dq/dt in Y BR_q(p) + alpha q_bar - q``.  Between events the motion is an
exponential approach to constant targets,

    z(t) = T + w (z0 - T),    w = exp(-(t - t0)),

so every switching function (a difference of two payoff components) is
affine in ``w`` and its root is closed form.  In exact mode ``w`` is a
Fraction and the run is exact; times are reported as ``-log`` of the
cumulative decay.

State is carried internally as deviations ``(x, y) = (p - p_bar, q - q_bar)``
which keeps the float relative precision of ``H`` as it decays.
"""
from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from . import arith
from .game import GameMatrix, NashEquilibrium, P, Q, solve_nash, tie_set
from .geometry import SymplecticForm, symplectic_operators

log = logging.getLogger(__name__)

T_MAX = 50.0
SEGMENT_CAP = 10 ** 6
EPS_TIE = 1e-10
EPS_DERIV = 1e-9


class SpecError(ValueError):
    """A DynamicsSpec violates one of its defining constraints."""


class FlowError(RuntimeError):
    """Numerical or logical failure while integrating."""


class FrameError(FlowError):
    """No unique sliding target for the requested supports."""


class EmptyFrameError(FrameError):
    """The sliding target lies outside the target simplex (orbit leaves)."""


class AmbiguousContinuation(FlowError):
    pass


def _close(a, b, exact: bool, tol: float) -> bool:
    diff = np.abs(a - b)
    if exact:
        return all(v == 0 for v in np.ravel(diff))
    scale = max(1.0, float(np.max(np.abs(a))), float(np.max(np.abs(b))))
    return float(np.max(diff)) <= tol * scale


@dataclass(frozen=True)
class DynamicsSpec:
    """``(M, X, Y, alpha, equilibrium)`` with validated constraints."""

    M: GameMatrix
    X: np.ndarray
    Y: np.ndarray
    alpha: object
    equilibrium: NashEquilibrium
    kind: str = "custom"

    def __post_init__(self):
        M, exact = self.M, self.M.exact
        m, n = M.shape
        if self.X.shape != (m, m) or self.Y.shape != (n, n):
            raise SpecError("X must be m x m and Y must be n x n")
        if not _close(M.entries @ self.Y, self.X.T @ M.entries, exact, 1e-12):
            raise SpecError("commutation constraint M Y = X' M fails")
        one_p, one_q = arith.ones(m, exact), arith.ones(n, exact)
        for i in range(m):
            if not _close(one_p @ self.targets_p[i], arith.to_scalar(1, exact), exact, 1e-12):
                raise SpecError(f"X e_{i + 1} + alpha p_bar leaves the affine hull of the p-simplex")
        for j in range(n):
            if not _close(one_q @ self.targets_q[j], arith.to_scalar(1, exact), exact, 1e-12):
                raise SpecError(f"Y e_{j + 1} + alpha q_bar leaves the affine hull of the q-simplex")
        eq = self.equilibrium
        if m == n and eq.completely_mixed and arith.det(M.entries) != 0:
            one_minus = 1 - self.alpha
            if not (_close(self.X @ eq.p_bar, one_minus * eq.p_bar, exact, 1e-10)
                    and _close(self.Y @ eq.q_bar, one_minus * eq.q_bar, exact, 1e-10)):
                raise SpecError("X p_bar = (1 - alpha) p_bar fails")

    @property
    def exact(self) -> bool:
        return self.M.exact

    @cached_property
    def targets_p(self) -> np.ndarray:
        """Row ``i`` is ``X e_i + alpha p_bar``."""
        return self.X.T + self.alpha * self.equilibrium.p_bar[None, :]

    @cached_property
    def targets_q(self) -> np.ndarray:
        return self.Y.T + self.alpha * self.equilibrium.q_bar[None, :]

    @cached_property
    def dev_targets_p(self) -> np.ndarray:
        return self.targets_p - self.equilibrium.p_bar[None, :]

    @cached_property
    def dev_targets_q(self) -> np.ndarray:
        return self.targets_q - self.equilibrium.q_bar[None, :]

    @cached_property
    def row_base(self) -> np.ndarray:
        """``M q_bar``; row payoffs are ``row_base + M y``."""
        return self.M.entries @ self.equilibrium.q_bar

    @cached_property
    def col_base(self) -> np.ndarray:
        return self.equilibrium.p_bar @ self.M.entries

    @cached_property
    def scale(self) -> float:
        return max(1e-300, float(np.max(np.abs(arith.to_float(self.M.entries)))))

    def payoffs(self, x, y):
        """Row payoffs ``Mq`` and column payoffs ``p'M`` from deviations."""
        a = self.M.entries
        return self.row_base + a @ y, self.col_base + x @ a

    def hamiltonian(self, x, y):
        r, c = self.payoffs(x, y)
        return max(r) - min(c)

    def to_json(self) -> dict:
        conv = str if self.exact else float
        return {"kind": self.kind, "matrix": self.M.to_json(),
                "X": [[conv(v) for v in row] for row in self.X],
                "Y": [[conv(v) for v in row] for row in self.Y],
                "alpha": conv(self.alpha), "equilibrium": self.equilibrium.to_json()}


def make_spec(M: GameMatrix, kind: str = "best_response", A=None,
              equilibrium: Optional[NashEquilibrium] = None) -> DynamicsSpec:
    """Best-response dynamics (``X = Y = id``, ``alpha = 0``) or the
    Hamiltonian field of the form ``A`` (``X = P_p A'^{-1} M'``,
    ``Y = P_q A^{-1} M``, ``alpha = 1``)."""
    eq = equilibrium if equilibrium is not None else solve_nash(M, check=False)
    exact = M.exact
    if kind == "best_response":
        m, n = M.shape
        return DynamicsSpec(M, arith.eye(m, exact), arith.eye(n, exact),
                            arith.to_scalar(0, exact), eq, kind)
    if kind == "hamiltonian":
        form = SymplecticForm(M.entries if A is None else arith.as_array(A, exact))
        Lp, Lq = symplectic_operators(form)
        return DynamicsSpec(M, Lp @ M.entries.T, Lq @ M.entries,
                            arith.to_scalar(1, exact), eq, kind)
    raise SpecError(f"unknown dynamics kind {kind!r}")


@dataclass(frozen=True)
class FlowState:
    p: np.ndarray
    q: np.ndarray
    t: float = 0.0


@dataclass(frozen=True)
class SegmentRecord:
    support_p: tuple          # 1-based
    support_q: tuple
    target_p: np.ndarray
    target_q: np.ndarray
    t_enter: float
    t_exit: float
    mode: str                 # "transversal" | "sliding"
    p_enter: np.ndarray = None
    q_enter: np.ndarray = None
    truncated: bool = False


@dataclass(frozen=True)
class SlidingFrame:
    """Sliding target ``(a, b)`` on ``Z_p x Z_q`` for equal-size supports.

    ``weights_p``/``weights_q`` are the barycentric weights of ``a``/``b``
    on the targets of the supports; all are strictly positive.
    """
    a: np.ndarray
    b: np.ndarray
    support_p: tuple          # 1-based
    support_q: tuple
    weights_p: np.ndarray
    weights_q: np.ndarray
    spec: DynamicsSpec = field(repr=False, compare=False, default=None)

    def decompose(self, p, q):
        """Split ``(p, q) = (p~, q~) + (p^, q^)``.

        ``p~`` lies in the direction space of ``Z_p`` (all support columns
        of ``p'M`` equal, entries sum to zero) and ``p^`` in the affine hull
        of the support targets; likewise for ``q``.
        """
        spec = self.spec
        I = [i - 1 for i in self.support_p]
        J = [j - 1 for j in self.support_q]
        hat_p = _affine_split(spec.targets_p[I], spec.M.entries[:, J], p, spec.exact)
        hat_q = _affine_split(spec.targets_q[J], spec.M.entries[I, :].T, q, spec.exact)
        return p - hat_p, q - hat_q, hat_p, hat_q


def _affine_split(targets: np.ndarray, cols: np.ndarray, z, exact: bool):
    """Point ``h`` in aff(targets) with ``(z - h)' cols`` having equal entries."""
    k = targets.shape[0]
    a = arith.zeros((k, k), exact)
    rhs = arith.zeros(k, exact)
    proj = targets @ cols            # (k, k): target r against column c
    zc = z @ cols
    for c in range(1, k):
        a[c - 1, :] = proj[:, c] - proj[:, 0]
        rhs[c - 1] = zc[c] - zc[0]
    a[k - 1, :] = arith.ones(k, exact)
    rhs[k - 1] = arith.to_scalar(1, exact)
    w = arith.solve(a, rhs)
    return w @ targets


def _frame_weights(targets: np.ndarray, pay: np.ndarray, exact: bool):
    """Weights ``w`` (sum 1) with ``(w @ targets) @ pay`` constant."""
    k = targets.shape[0]
    proj = targets @ pay
    a = arith.zeros((k, k), exact)
    for c in range(1, k):
        a[c - 1, :] = proj[:, c] - proj[:, 0]
    a[k - 1, :] = arith.ones(k, exact)
    rhs = arith.zeros(k, exact)
    rhs[k - 1] = arith.to_scalar(1, exact)
    try:
        return arith.solve(a, rhs)
    except arith.SingularMatrixError as exc:
        raise FrameError("sliding system is rank deficient") from exc


def _frame0(spec: DynamicsSpec, I: tuple, J: tuple) -> SlidingFrame:
    """0-based core of sliding_target, memoized per spec."""
    cache = spec.__dict__.setdefault("_frame_cache", {})
    key = (I, J)
    if key in cache:
        hit = cache[key]
        if isinstance(hit, Exception):
            raise hit
        return hit
    try:
        frame = _build_frame(spec, I, J)
    except FrameError as exc:
        cache[key] = exc
        raise
    cache[key] = frame
    return frame


def _build_frame(spec, I, J):
    if len(I) != len(J):
        raise FrameError("sliding requires equal support sizes")
    exact, a_mat = spec.exact, spec.M.entries
    wp = _frame_weights(spec.targets_p[list(I)], a_mat[:, list(J)], exact)
    wq = _frame_weights(spec.targets_q[list(J)], a_mat[list(I), :].T, exact)
    tol = 0 if exact else 1e-12
    if any(v <= tol for v in wp) or any(v <= tol for v in wq):
        raise EmptyFrameError(f"sliding target outside target simplex for {I}/{J}")
    a = wp @ spec.targets_p[list(I)]
    b = wq @ spec.targets_q[list(J)]
    return SlidingFrame(a, b, tuple(i + 1 for i in I), tuple(j + 1 for j in J),
                        wp, wq, spec)


def sliding_target(spec: DynamicsSpec, support_p: Sequence[int],
                   support_q: Sequence[int]) -> SlidingFrame:
    """Unique ``(a, b)`` in ``Z_p x Z_q`` and the target simplex product.

    Supports are 1-based.  Raises FrameError on rank deficiency and
    EmptyFrameError when the intersection misses the target simplices.
    """
    I = tuple(sorted(i - 1 for i in support_p))
    J = tuple(sorted(j - 1 for j in support_q))
    return _frame0(spec, I, J)


@dataclass(frozen=True)
class Continuation:
    """Successor chosen by resolve_event (0-based supports)."""
    support_p: tuple
    support_q: tuple
    mode: str
    dev_target_p: np.ndarray
    dev_target_q: np.ndarray
    margin: float
    candidates: tuple = ()

    @property
    def supports_1based(self):
        return tuple(i + 1 for i in self.support_p), tuple(j + 1 for j in self.support_q)


def _targets_for(spec: DynamicsSpec, I: tuple, J: tuple):
    if len(I) == 1 and len(J) == 1:
        return spec.dev_targets_p[I[0]], spec.dev_targets_q[J[0]], "transversal"
    fr = _frame0(spec, I, J)
    eq = spec.equilibrium
    return fr.a - eq.p_bar, fr.b - eq.q_bar, "sliding"


def _direction(x, y, tx, ty, frame: str):
    if frame == "time":
        return tx - x, ty - y
    return tx, ty


def candidate_margin(spec: DynamicsSpec, x, y, tiedP, tiedQ, I, J, frame: str = "time"):
    """Smallest normalized outward derivative for successor ``(I, J)``.

    Positive means every tied index outside ``I`` (resp. ``J``) strictly
    falls behind under the candidate's targets.  Returns None if the
    candidate has no valid sliding target.
    """
    try:
        tx, ty, _ = _targets_for(spec, I, J)
    except FrameError:
        return None
    dx, dy = _direction(x, y, tx, ty, frame)
    a = spec.M.entries
    dr = a @ dy          # derivative of row payoffs
    dc = dx @ a          # derivative of column payoffs
    vals = []
    i0, j0 = I[0], J[0]
    for l in tiedP:
        if l not in I:
            vals.append(dr[i0] - dr[l])
    for l in tiedQ:
        if l not in J:
            vals.append(dc[l] - dc[j0])
    if not vals:
        return math.inf
    m = min(vals)
    return m if spec.exact else float(m) / spec.scale


def resolve_event(spec: DynamicsSpec, x, y, tiedP: Sequence[int], tiedQ: Sequence[int],
                  frame: str = "time") -> Continuation:
    """Choose the successor supports at a tie point (0-based tie sets).

    Candidates are single-valued pairs ``(i, j)`` from the tie sets and
    equal-size sub-supports of size >= 2 (sliding).  A candidate is
    consistent if its outward derivative test is strictly positive.  With
    several consistent candidates the lowest-index one wins (logged).
    ``frame`` is ``"time"`` for the inclusion or ``"level"`` for the
    level-set translation flow.
    """
    tiedP, tiedQ = tuple(sorted(tiedP)), tuple(sorted(tiedQ))
    tol = 0 if spec.exact else EPS_DERIV
    found = []
    for i in tiedP:
        for j in tiedQ:
            mg = candidate_margin(spec, x, y, tiedP, tiedQ, (i,), (j,), frame)
            if mg is not None and mg > tol:
                found.append(((i,), (j,), mg))
    if not found:
        for k in range(2, min(len(tiedP), len(tiedQ)) + 1):
            for I in itertools.combinations(tiedP, k):
                for J in itertools.combinations(tiedQ, k):
                    mg = candidate_margin(spec, x, y, tiedP, tiedQ, I, J, frame)
                    if mg is not None and mg > tol:
                        found.append((I, J, mg))
    if not found:
        raise FlowError(
            f"no consistent continuation at tie P{_one(tiedP)} Q{_one(tiedQ)}; "
            "transversality assumptions fail for this configuration")
    if len(found) > 1:
        log.warning("ambiguous continuation at tie P%s Q%s: %s; taking lowest index",
                    _one(tiedP), _one(tiedQ), [(_one(I), _one(J)) for I, J, _ in found])
    I, J, mg = found[0]
    tx, ty, mode = _targets_for(spec, I, J)
    return Continuation(I, J, mode, tx, ty, mg,
                        tuple((_one(a), _one(b), m) for a, b, m in found))


def _one(idx) -> tuple:
    return tuple(i + 1 for i in idx)


def tie_sets(spec: DynamicsSpec, x, y, eps: float = EPS_TIE):
    r, c = spec.payoffs(x, y)
    return tie_set(r, max(r), "max", eps), tie_set(c, min(c), "min", eps)


def _exit_events(spec: DynamicsSpec, x, y, cont: Continuation, frame: str):
    """Candidate exits ``(param, side, index)`` for the current segment.

    ``param`` is ``1 - w`` in the time frame and the elapsed ``s`` in the
    level frame; smaller means earlier.
    """
    a = spec.M.entries
    r0, c0 = spec.payoffs(x, y)
    I, J = cont.support_p, cont.support_q
    i0, j0 = I[0], J[0]
    tx, ty = cont.dev_target_p, cont.dev_target_q
    out = []
    if frame == "time":
        rT, cT = spec.payoffs(tx, ty)
    else:
        dr, dc = a @ ty, tx @ a
    for l in range(len(r0)):
        if l in I:
            continue
        g0 = r0[l] - r0[i0]
        if frame == "time":
            gT = rT[l] - rT[i0]
            if gT > 0:
                out.append((-g0 / (gT - g0), P, l))
        else:
            slope = dr[l] - dr[i0]
            if slope > 0:
                out.append((-g0 / slope, P, l))
    for l in range(len(c0)):
        if l in J:
            continue
        g0 = c0[j0] - c0[l]
        if frame == "time":
            gT = cT[j0] - cT[l]
            if gT > 0:
                out.append((-g0 / (gT - g0), Q, l))
        else:
            slope = dc[j0] - dc[l]
            if slope > 0:
                out.append((-g0 / slope, Q, l))
    return out


def _earliest(events, exact: bool, eps: float = 1e-9):
    """Earliest parameter and every event merged with it."""
    if not events:
        return None, []
    best = min(e[0] for e in events)
    if exact:
        hit = [e for e in events if e[0] == best]
    else:
        tol = eps * max(abs(best), 1e-300) + 1e-300
        hit = [e for e in events if e[0] - best <= tol]
    return best, hit


def _mask(idx) -> int:
    return sum(1 << i for i in idx)


def _unmask(mask: int) -> tuple:
    out, i = [], 0
    while mask:
        if mask & 1:
            out.append(i + 1)
        mask >>= 1
        i += 1
    return tuple(out)


class Trajectory:
    """Event points of a run plus the supports used on each segment.

    ``t``, ``p``, ``q`` have one row per event point (start, every event,
    end); segment ``k`` runs from point ``k`` to ``k + 1`` with supports
    ``mask_p[k]``/``mask_q[k]`` (bitmasks of 0-based indices).  In exact
    mode ``decay[k]`` is ``exp(-(t[k] - t[0]))`` as a Fraction.
    """

    def __init__(self, spec, t, p, q, mask_p, mask_q, sliding, decay=None,
                 truncated=False, time_name="t"):
        self.spec = spec
        self.t = np.asarray(t, dtype=float)
        self.p, self.q = p, q
        self.mask_p = np.asarray(mask_p, dtype=np.int64)
        self.mask_q = np.asarray(mask_q, dtype=np.int64)
        self.sliding = np.asarray(sliding, dtype=bool)
        self.decay = decay
        self.truncated = truncated
        self.time_name = time_name

    def __len__(self):
        return len(self.mask_p)

    @property
    def n_segments(self) -> int:
        return len(self.mask_p)

    @property
    def final_state(self) -> FlowState:
        return FlowState(self.p[-1], self.q[-1], float(self.t[-1]))

    def hamiltonian(self) -> np.ndarray:
        """``H`` at every event point, computed from the stored states."""
        a = self.spec.M.entries
        if self.spec.exact:
            return np.array([max(a @ q) - min(p @ a) for p, q in zip(self.p, self.q)],
                            dtype=object)
        return np.max(self.q @ a.T, axis=1) - np.min(self.p @ a, axis=1)

    def segments(self) -> list:
        spec = self.spec
        out = []
        for k in range(self.n_segments):
            sp, sq = _unmask(int(self.mask_p[k])), _unmask(int(self.mask_q[k]))
            I, J = tuple(i - 1 for i in sp), tuple(j - 1 for j in sq)
            tx, ty, mode = _targets_for(spec, I, J)
            out.append(SegmentRecord(
                sp, sq, tx + spec.equilibrium.p_bar, ty + spec.equilibrium.q_bar,
                float(self.t[k]), float(self.t[k + 1]), mode, self.p[k], self.q[k],
                self.truncated and k == self.n_segments - 1))
        return out

    def support_labels(self):
        return [(_unmask(int(a)), _unmask(int(b))) for a, b in zip(self.mask_p, self.mask_q)]

    def to_rows(self):
        m, n = self.p.shape[1], self.q.shape[1]
        header = [self.time_name] + [f"p_{i + 1}" for i in range(m)] + \
            [f"q_{j + 1}" for j in range(n)] + ["support_p", "support_q", "mode", "H"]
        rows = []
        conv = str if self.spec.exact else (lambda v: repr(float(v)))
        H = self.hamiltonian()
        for k in range(len(self.t)):
            seg = min(k, self.n_segments - 1)
            if seg < 0:
                sp = sq = ""
                mode = ""
            else:
                sp = ";".join(map(str, _unmask(int(self.mask_p[seg]))))
                sq = ";".join(map(str, _unmask(int(self.mask_q[seg]))))
                mode = "sliding" if self.sliding[seg] else "transversal"
            rows.append([repr(float(self.t[k]))] + [conv(v) for v in self.p[k]] +
                        [conv(v) for v in self.q[k]] + [sp, sq, mode, conv(H[k])])
        return header, rows

    def to_csv(self, path) -> None:
        header, rows = self.to_rows()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)


def _dev(spec, state: FlowState):
    eq = spec.equilibrium
    return spec.M.vec(state.p) - eq.p_bar, spec.M.vec(state.q) - eq.q_bar


def _check_not_equilibrium(spec, x, y):
    if spec.exact:
        zero = all(v == 0 for v in x) and all(v == 0 for v in y)
    else:
        zero = max(np.max(np.abs(x)), np.max(np.abs(y))) == 0.0
    if zero:
        raise FlowError("flow is undefined at the equilibrium (never reached in finite time)")


def _decay_to(dt: float, exact: bool):
    """``1 - exp(-dt)`` as a scalar of the run's arithmetic."""
    omw = -math.expm1(-dt)
    return Fraction(omw) if exact else omw


def _log_decay(w) -> float:
    if isinstance(w, Fraction):
        return math.log(w.denominator) - math.log(w.numerator)
    return -math.log(w)


def advance_segment(state: FlowState, spec: DynamicsSpec, t_max: float = T_MAX,
                    cont: Optional[Continuation] = None):
    """Advance one segment to the next event.

    Returns ``(record, new_state, continuation_at_new_state_ties)`` where
    the last item lists the tie sets at the event for resolve_event.
    """
    x, y = _dev(spec, state)
    _check_not_equilibrium(spec, x, y)
    if cont is None:
        tp, tq = tie_sets(spec, x, y)
        cont = resolve_event(spec, x, y, tp, tq)
    rec, x1, y1, t1, w, ties = _step(spec, x, y, state.t, cont, state.t + t_max)
    eq = spec.equilibrium
    return rec, FlowState(x1 + eq.p_bar, y1 + eq.q_bar, t1), ties


def _step(spec, x, y, t, cont: Continuation, t_end: float):
    exact = spec.exact
    events = _exit_events(spec, x, y, cont, "time")
    best, hit = _earliest(events, exact)
    omw_end = _decay_to(t_end - t, exact)
    truncated = best is None or best >= omw_end
    if truncated:
        omw = omw_end
        hit = []
    else:
        omw = best
        if omw <= 0:
            raise FlowError("non-positive event time: inconsistent continuation")
    w = 1 - omw
    tx, ty = cont.dev_target_p, cont.dev_target_q
    x1 = x + omw * (tx - x)
    y1 = y + omw * (ty - y)
    t1 = t_end if truncated else t + _log_decay(w)
    eq = spec.equilibrium
    rec = SegmentRecord(_one(cont.support_p), _one(cont.support_q), tx + eq.p_bar,
                        ty + eq.q_bar, t, t1, cont.mode, x + eq.p_bar, y + eq.q_bar,
                        truncated)
    tiedP = set(cont.support_p) | {l for _, s, l in hit if s == P}
    tiedQ = set(cont.support_q) | {l for _, s, l in hit if s == Q}
    return rec, x1, y1, t1, w, (tuple(sorted(tiedP)), tuple(sorted(tiedQ)))


def flow(state: FlowState, spec: DynamicsSpec, t_end: float,
         max_segments: int = SEGMENT_CAP, fast: Optional[bool] = None) -> Trajectory:
    """Integrate from ``state`` to time ``t_end``.

    ``fast`` selects the compiled float kernel for transversal stretches
    (default: on in float mode); ties it cannot settle are handed back to
    resolve_event.
    """
    x, y = _dev(spec, state)
    _check_not_equilibrium(spec, x, y)
    exact = spec.exact
    if fast is None:
        fast = not exact
    if fast and exact:
        raise FlowError("the compiled kernel is float-only")
    eq = spec.equilibrium
    ts, xs, ys, mp, mq, sl = [float(state.t)], [x], [y], [], [], []
    decay = [Fraction(1)] if exact else None
    t = float(state.t)
    if t_end <= t:
        return Trajectory(spec, ts, np.array([x + eq.p_bar]), np.array([y + eq.q_bar]),
                          mp, mq, sl, decay)
    tp, tq = tie_sets(spec, x, y)
    cont = resolve_event(spec, x, y, tp, tq)
    truncated = False
    chunks = []
    python_next = False
    done_segments = 0
    while True:
        if done_segments + len(mp) >= max_segments:
            raise FlowError(f"segment cap {max_segments} exceeded")
        if fast and cont.mode == "transversal" and not python_next:
            from ._fastflow import run_transversal
            res = run_transversal(spec, x, y, t, cont.support_p[0], cont.support_q[0], t_end,
                                  max_segments - done_segments - len(mp))
            _flush(ts, xs, ys, mp, mq, sl, chunks)
            if res.count:
                chunks.append((res.t, res.x, res.y, res.mask_p, res.mask_q))
                done_segments += res.count
                x, y, t = res.x[-1].copy(), res.y[-1].copy(), float(res.t[-1])
                ts[:], xs[:], ys[:] = [t], [x], [y]
            if res.done:
                break
            tp, tq = res.tied_p, res.tied_q
            cont = resolve_event(spec, x, y, tp, tq)
            # settle the tie with one general step before re-entering the kernel
            python_next = True
            continue
        python_next = False
        rec_cont = cont
        _, x, y, t, w, (tp, tq) = _step(spec, x, y, t, cont, t_end)
        ts.append(t)
        xs.append(x)
        ys.append(y)
        mp.append(_mask(rec_cont.support_p))
        mq.append(_mask(rec_cont.support_q))
        sl.append(rec_cont.mode == "sliding")
        if exact:
            decay.append(decay[-1] * w)
        if t >= t_end:
            break
        cont = resolve_event(spec, x, y, tp, tq)
    _flush(ts, xs, ys, mp, mq, sl, chunks)
    t_all, x_all, y_all, mp_all, mq_all, sl_all = _concat(chunks, exact)
    return Trajectory(spec, t_all, x_all + eq.p_bar[None, :], y_all + eq.q_bar[None, :],
                      mp_all, mq_all, sl_all, decay, truncated)


def _flush(ts, xs, ys, mp, mq, sl, chunks):
    """Move python-stepped points into the chunk list, keeping the last
    point as the shared boundary of the next chunk."""
    if len(ts) > 1 or not chunks:
        chunks.append((np.array(ts), np.array(xs, dtype=xs[0].dtype),
                       np.array(ys, dtype=ys[0].dtype),
                       np.array(mp, dtype=np.int64), np.array(mq, dtype=np.int64),
                       np.array(sl, dtype=bool)))
    last = (ts[-1], xs[-1], ys[-1])
    del ts[:], xs[:], ys[:], mp[:], mq[:], sl[:]
    ts.append(last[0]), xs.append(last[1]), ys.append(last[2])


def _concat(chunks, exact):
    """Join chunks; consecutive chunks share their boundary point."""
    t_parts, x_parts, y_parts, mp_parts, mq_parts, sl_parts = [], [], [], [], [], []
    for k, ch in enumerate(chunks):
        t_c, x_c, y_c, mp_c, mq_c = ch[:5]
        sl_c = ch[5] if len(ch) > 5 else np.zeros(len(mp_c), dtype=bool)
        start = 0 if k == 0 else 1
        t_parts.append(t_c[start:])
        x_parts.append(x_c[start:])
        y_parts.append(y_c[start:])
        mp_parts.append(mp_c)
        mq_parts.append(mq_c)
        sl_parts.append(sl_c)
    return (np.concatenate(t_parts), np.concatenate(x_parts), np.concatenate(y_parts),
            np.concatenate(mp_parts), np.concatenate(mq_parts), np.concatenate(sl_parts))


def reparametrize_fictitious_play(traj: Trajectory) -> Trajectory:
    """Same path with event times mapped through ``s = exp(t)``."""
    return Trajectory(traj.spec, np.exp(traj.t), traj.p, traj.q, traj.mask_p, traj.mask_q,
                      traj.sliding, traj.decay, traj.truncated, time_name="s")
