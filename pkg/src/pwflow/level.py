"""Piecewise-translation flow on a level set ``H = rho``.

With ``s = exp(t)`` and the rescaling ``zeta = s (z - z_bar)`` the inclusion
becomes ``d zeta/ds = T - z_bar`` on the level set through the start, where
``T`` is the current target (vertex target or sliding target).  Motion is
straight between events and event parameters are roots of affine functions,
so runs are exact in rational mode.

This needs ``H`` to be positively homogeneous about the equilibrium, which
holds when the equilibrium is completely mixed.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence

import numpy as np

from . import arith
from .flow import (Continuation, DynamicsSpec, FlowError, FrameError, _exit_events,
                   _earliest, _one, _targets_for, resolve_event, tie_sets)
from .game import P, Q
from .geometry import LevelSetPoint

log = logging.getLogger(__name__)

S_CAP = 1e6
LEVEL_SEGMENT_CAP = 10 ** 5
EPS_S = 1e-12


class LevelFlowError(FlowError):
    pass


class NoReturnError(LevelFlowError):
    """No return to the section inside the cap; carries the itinerary."""

    def __init__(self, msg, itinerary):
        super().__init__(msg)
        self.itinerary = itinerary


def _require_mixed(spec: DynamicsSpec):
    if not spec.equilibrium.completely_mixed:
        raise LevelFlowError("level-set flow needs a completely mixed equilibrium")


Cell = tuple   # ((support_p...), (support_q...)) 1-based


@dataclass(frozen=True)
class TranslationSegment:
    direction: tuple          # (v_p, v_q)
    cell: Cell
    s_enter: object
    s_exit: object
    p_start: np.ndarray = field(repr=False, default=None)
    q_start: np.ndarray = field(repr=False, default=None)
    mode: str = "transversal"

    @property
    def length(self):
        return self.s_exit - self.s_enter

    @property
    def p_end(self):
        return self.p_start + self.length * self.direction[0]

    @property
    def q_end(self):
        return self.q_start + self.length * self.direction[1]

    def at(self, s):
        d = s - self.s_enter
        return self.p_start + d * self.direction[0], self.q_start + d * self.direction[1]

    def speed(self) -> float:
        v = np.concatenate([arith.to_float(self.direction[0]), arith.to_float(self.direction[1])])
        return float(np.linalg.norm(v))


@dataclass
class _Cursor:
    """Position of the level-flow generator between segments."""
    x: np.ndarray
    y: np.ndarray
    s: object
    tiedP: tuple
    tiedQ: tuple


def iter_level(spec: DynamicsSpec, p, q, s0=0, tied: Optional[tuple] = None,
               cont: Optional[Continuation] = None, record: Optional[list] = None
               ) -> Iterator[TranslationSegment]:
    """Endless generator of translation segments from ``(p, q)``.

    ``tied`` overrides the tie sets at the start (0-based); otherwise they
    are detected with the float tolerance.  ``record`` collects each
    Continuation (for transversality audits).
    """
    _require_mixed(spec)
    eq = spec.equilibrium
    x, y = spec.M.vec(p) - eq.p_bar, spec.M.vec(q) - eq.q_bar
    exact = spec.exact
    s = s0 if not exact else arith.to_scalar(s0, True)
    if tied is None:
        tied = tie_sets(spec, x, y)
    tp, tq = tied
    while True:
        if cont is None:
            cont = resolve_event(spec, x, y, tp, tq, frame="level")
        if record is not None:
            record.append(cont)
        events = _exit_events(spec, x, y, cont, "level")
        best, hit = _earliest(events, exact)
        if best is None:
            raise LevelFlowError("segment never exits its cell (unbounded level set?)")
        if best <= 0:
            raise LevelFlowError("non-positive exit parameter: inconsistent continuation")
        vx, vy = cont.dev_target_p, cont.dev_target_q
        seg = TranslationSegment((vx, vy), (_one(cont.support_p), _one(cont.support_q)),
                                 s, s + best, x + eq.p_bar, y + eq.q_bar, cont.mode)
        yield seg
        x = x + best * vx
        y = y + best * vy
        s = s + best
        tp = tuple(sorted(set(cont.support_p) | {l for _, sd, l in hit if sd == P}))
        tq = tuple(sorted(set(cont.support_q) | {l for _, sd, l in hit if sd == Q}))
        cont = None


def level_flow(start: LevelSetPoint, spec: DynamicsSpec, s_end, s_start=0,
               max_segments: int = LEVEL_SEGMENT_CAP) -> List[TranslationSegment]:
    """Translation segments covering ``[s_start, s_end]``; the last one is
    clipped at ``s_end``."""
    out: List[TranslationSegment] = []
    if s_end <= s_start:
        return out
    for seg in iter_level(spec, start.p, start.q, s_start):
        if len(out) >= max_segments:
            raise LevelFlowError(f"segment cap {max_segments} exceeded")
        if seg.s_exit >= s_end:
            out.append(TranslationSegment(seg.direction, seg.cell, seg.s_enter, s_end,
                                          seg.p_start, seg.q_start, seg.mode))
            return out
        out.append(seg)
    return out


def level_state(segments: Sequence[TranslationSegment], s):
    """Point of a segment list at parameter ``s``."""
    for seg in segments:
        if seg.s_enter <= s <= seg.s_exit:
            return seg.at(s)
    raise ValueError("s outside the covered range")


# -- sections -----------------------------------------------------------------

@dataclass(frozen=True)
class Hyperplane:
    """Oriented section ``{normal . (p, q) = offset}``; a crossing counts
    when ``normal . v`` has the sign of ``orientation``."""
    normal: np.ndarray
    offset: object
    orientation: int = 1
    label: str = ""

    def value(self, p, q):
        return self.normal @ np.concatenate([p, q]) - self.offset

    def crossing(self, p, q, vp, vq, length, skip_start: bool = False):
        slope = self.normal @ np.concatenate([vp, vq])
        if slope * self.orientation <= 0:
            return None
        s = -self.value(p, q) / slope
        floor = EPS_S * max(1.0, float(abs(length))) if not arith.is_exact(p) else 0
        if (s <= floor) if skip_start else (s < -floor):
            return None
        if s > length + floor:
            return None
        return min(max(s, 0 * s), length)

    def to_json(self) -> dict:
        conv = str if arith.is_exact(self.normal) else float
        return {"normal": [conv(v) for v in self.normal], "offset": conv(self.offset),
                "orientation": self.orientation, "label": self.label}


def switching_hyperplane(spec: DynamicsSpec, side: str, a: int, b: int,
                         orientation: int = 1) -> Hyperplane:
    """Indifference hyperplane between pure strategies ``a`` and ``b``
    (1-based) of one player, oriented so that ``a`` gains on crossing.

    Side P: ``(Mq)_a - (Mq)_b = 0``; side Q: ``(p'M)_b - (p'M)_a = 0`` (the
    column player minimizes, so ``a`` gains when its payoff drops).
    """
    Mx = spec.M.entries
    m, n = Mx.shape
    exact = spec.exact
    if side == P:
        normal = np.concatenate([arith.zeros(m, exact), Mx[a - 1] - Mx[b - 1]])
    else:
        normal = np.concatenate([Mx[:, b - 1] - Mx[:, a - 1], arith.zeros(n, exact)])
    return Hyperplane(normal, arith.to_scalar(0, exact), orientation,
                      f"{side}:{a}>{b}")


def _added(prev: Cell, nxt: Cell):
    """Side and index entering at the transition ``prev -> nxt``."""
    for side, k in ((P, 0), (Q, 1)):
        new = sorted(set(nxt[k]) - set(prev[k]))
        if new:
            return side, new[0], prev[k][0]
    return None


def transition_hyperplane(spec: DynamicsSpec, prev: Cell, nxt: Cell) -> Hyperplane:
    """Hyperplane on which the flow passes from cell ``prev`` to ``nxt``."""
    add = _added(prev, nxt)
    if add is None:
        # a support shrinks only: the exit is where a sliding frame dissolves
        raise LevelFlowError(f"no entering index between {prev} and {nxt}")
    side, new, old = add
    return switching_hyperplane(spec, side, new, old)


def first_return(section, point, spec: DynamicsSpec, s_cap=S_CAP,
                 max_segments: int = LEVEL_SEGMENT_CAP, tied=None):
    """Next forward crossing of ``section`` from ``point`` (on the section).

    ``section`` is any object with ``crossing(p, q, vp, vq, length,
    skip_start)``.  Returns ``(p, q, return_s, itinerary)``.
    """
    p, q = point
    itinerary = []
    for k, seg in enumerate(iter_level(spec, p, q, 0, tied=tied)):
        if not itinerary or itinerary[-1] != seg.cell:
            itinerary.append(seg.cell)
        s = section.crossing(seg.p_start, seg.q_start, seg.direction[0], seg.direction[1],
                             seg.length, skip_start=(k == 0))
        if s is not None:
            pp, qq = seg.at(seg.s_enter + s)
            return pp, qq, seg.s_enter + s, itinerary
        if seg.s_exit > s_cap or k >= max_segments:
            raise NoReturnError("no return to the section within the cap", itinerary)
    raise AssertionError("unreachable")


# -- affine pieces ------------------------------------------------------------

def level_plane(spec: DynamicsSpec, cell: Cell, rho):
    """``(normal, offset)`` of the plane carrying the level set in ``cell``:
    ``(Mq)_i - (p'M)_j = rho`` for ``i, j`` in the cell's supports."""
    Mx = spec.M.entries
    i, j = cell[0][0] - 1, cell[1][0] - 1
    return np.concatenate([-Mx[:, j], Mx[i]]), arith.to_scalar(rho, spec.exact)


@dataclass(frozen=True)
class SectionChart:
    """Affine chart ``z = origin + basis @ u`` of a section plane."""
    origin: np.ndarray
    basis: np.ndarray         # (m + n, d) float

    def to_chart(self, z) -> np.ndarray:
        return np.linalg.lstsq(self.basis, arith.to_float(z) - self.origin, rcond=None)[0]

    def to_ambient(self, u) -> np.ndarray:
        return self.origin + self.basis @ np.asarray(u, dtype=float)


def plane_chart(spec: DynamicsSpec, section: Hyperplane, cell: Cell, rho) -> SectionChart:
    """Orthonormal chart of ``section`` inside the level plane of ``cell``.

    Origin is the minimum-norm point; the basis comes from an SVD so the
    chart is reproducible for identical inputs.
    """
    m, n = spec.M.shape
    ln, lc = level_plane(spec, cell, rho)
    rows = np.array([np.r_[np.ones(m), np.zeros(n)], np.r_[np.zeros(m), np.ones(n)],
                     arith.to_float(section.normal), arith.to_float(ln)])
    rhs = np.array([1.0, 1.0, float(section.offset), float(lc)])
    origin = np.linalg.lstsq(rows, rhs, rcond=None)[0]
    _, sv, vt = np.linalg.svd(rows)
    rank = int(np.sum(sv > 1e-12 * sv[0]))
    basis = vt[rank:].T
    # deterministic sign: largest-magnitude entry of each column positive
    for k in range(basis.shape[1]):
        if basis[np.argmax(np.abs(basis[:, k])), k] < 0:
            basis[:, k] = -basis[:, k]
    return SectionChart(origin, basis)


@dataclass(frozen=True)
class AffinePiece:
    """Return/transition map on one itinerary cell: ``u -> matrix u + offset``
    in chart coordinates; ``ambient`` holds the same map on ``(p, q)``."""
    matrix: np.ndarray
    offset: np.ndarray
    domain_cell: tuple
    section_in: object
    section_out: object
    ambient_matrix: np.ndarray = field(repr=False, default=None)
    ambient_offset: np.ndarray = field(repr=False, default=None)
    chart_in: SectionChart = field(repr=False, default=None)
    chart_out: SectionChart = field(repr=False, default=None)

    def __call__(self, u):
        return self.matrix @ np.asarray(u, dtype=float) + self.offset

    def apply_ambient(self, z):
        return self.ambient_matrix @ z + self.ambient_offset

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.matrix))


def cell_velocity(spec: DynamicsSpec, cell: Cell):
    """Constant level-flow velocity ``T - z_bar`` of a cell."""
    I = tuple(i - 1 for i in cell[0])
    J = tuple(j - 1 for j in cell[1])
    vx, vy, _ = _targets_for(spec, I, J)
    return np.concatenate([vx, vy])


def compose_transitions(spec: DynamicsSpec, cells: Sequence[Cell], exits: Sequence[Hyperplane]):
    """Ambient affine map flowing through ``cells[k]`` up to ``exits[k]``.

    Each step is ``z -> z + tau(z) v`` with ``tau = (c - n.z)/(n.v)``, i.e.
    ``(I - v n'/(n.v)) z + v c/(n.v)``.
    """
    exact = spec.exact
    d = sum(spec.M.shape)
    A = arith.eye(d, exact)
    b = arith.zeros(d, exact)
    for cell, plane in zip(cells, exits):
        v = cell_velocity(spec, cell)
        nv = plane.normal @ v
        if nv == 0:
            raise LevelFlowError(f"flow in cell {cell} is parallel to its exit plane")
        K = arith.eye(d, exact) - np.outer(v, plane.normal) / nv
        A = K @ A
        b = K @ b + v * (plane.offset / nv)
    return A, b


def compose_charted(spec: DynamicsSpec, cells: Sequence[Cell], exits: Sequence[Hyperplane],
                    rho, chart_in: SectionChart, chart_out: SectionChart):
    """Chart-to-chart composition of the crossing maps in float.

    After every crossing the map is re-expressed in an orthonormal chart
    of the exit plane, so only 2 x 2 products are formed.  Long itineraries
    stay well conditioned; the ambient product does not, because directions
    off the level set blow up.
    """
    origin, basis = chart_in.origin, chart_in.basis
    mat = np.eye(basis.shape[1])
    off = np.zeros(basis.shape[1])
    vel = {}
    for k, (cell, plane) in enumerate(zip(cells, exits)):
        if cell not in vel:
            vel[cell] = np.asarray(arith.to_float(cell_velocity(spec, cell)))
        v = vel[cell]
        nrm = np.asarray(arith.to_float(plane.normal))
        nv = float(nrm @ v)
        if nv == 0.0:
            raise LevelFlowError(f"flow in cell {cell} is parallel to its exit plane")
        c = float(plane.offset)
        # image of z = origin + basis w under z -> z + (c - n.z)/(n.v) v
        img_o = origin + ((c - nrm @ origin) / nv) * v
        img_b = basis - np.outer(v, nrm @ basis) / nv
        if k == len(cells) - 1:
            nxt = chart_out
        else:
            nxt = plane_chart(spec, plane, cell, rho)
        proj = nxt.basis.T if _orthonormal(nxt.basis) else np.linalg.pinv(nxt.basis)
        step_m = proj @ img_b
        step_o = proj @ (img_o - nxt.origin)
        mat = step_m @ mat
        off = step_m @ off + step_o
        origin, basis = nxt.origin, nxt.basis
    return mat, off


def _orthonormal(b) -> bool:
    return np.allclose(b.T @ b, np.eye(b.shape[1]), atol=1e-13)


def affine_piece(itinerary: Sequence[Cell], section_in: Hyperplane, section_out: Hyperplane,
                 spec: DynamicsSpec, rho=1, witnesses=None, chart_in=None, chart_out=None,
                 tol: float = 1e-9) -> AffinePiece:
    """Compose the crossing maps of ``itinerary`` from ``section_in`` to
    ``section_out``.

    ``witnesses`` are ambient ``(p, q)`` points on ``section_in``; each is
    flowed numerically, must realize the itinerary and land within ``tol``
    of the composed map.  A single witness is completed to three by small
    chart perturbations.
    """
    cells = [tuple(tuple(c) for c in cell) for cell in itinerary]
    exits = [transition_hyperplane(spec, cells[k], cells[k + 1]) for k in range(len(cells) - 1)]
    exits.append(section_out)
    A, b = compose_transitions(spec, cells, exits) if spec.exact else (None, None)
    cin = chart_in or plane_chart(spec, section_in, cells[0], rho)
    cout = chart_out or plane_chart(spec, section_out, cells[-1], rho)
    mat, off = compose_charted(spec, cells, exits, rho, cin, cout)
    piece = AffinePiece(mat, off, tuple(cells), section_in, section_out, A, b, cin, cout)
    if witnesses:
        for z in _complete_witnesses(spec, piece, witnesses):
            _check_witness(spec, piece, z, tol)
    return piece


def _complete_witnesses(spec, piece, witnesses):
    pts = [np.concatenate([arith.to_float(p), arith.to_float(q)]) for p, q in witnesses]
    if len(pts) >= 3:
        return pts[:3]
    base = pts[0]
    u0 = piece.chart_in.to_chart(base)
    out = list(pts)
    for k in range(piece.chart_in.basis.shape[1]):
        if len(out) >= 3:
            break
        for delta in (1e-4, 1e-5, 1e-6, 1e-7):
            u = u0.copy()
            u[k] += delta
            z = piece.chart_in.to_ambient(u)
            try:
                if _itinerary_from(spec, piece, z) == list(piece.domain_cell):
                    out.append(z)
                    break
            except FlowError:
                continue
    return out


def _split(spec, z):
    m = spec.M.rows
    return z[:m], z[m:]


def _itinerary_from(spec, piece, z):
    p, q = _split(spec, z)
    _, _, _, itin = first_return(piece.section_out, (p, q), spec,
                                 max_segments=4 * len(piece.domain_cell) + 8)
    return itin


def _check_witness(spec, piece, z, tol):
    p, q = _split(spec, z)
    pp, qq, _, itin = first_return(piece.section_out, (p, q), spec,
                                   max_segments=4 * len(piece.domain_cell) + 8)
    if itin != list(piece.domain_cell):
        raise LevelFlowError(f"witness does not realize itinerary: got {itin}")
    got = np.concatenate([arith.to_float(pp), arith.to_float(qq)])
    want = piece.chart_out.to_ambient(piece(piece.chart_in.to_chart(z)))
    err = float(np.max(np.abs(got - want)))
    if err > tol:
        raise LevelFlowError(f"witness disagrees with composed map by {err:.3e}")


# -- periodic orbits ----------------------------------------------------------

@dataclass(frozen=True)
class PeriodicOrbit:
    itinerary: tuple
    base_point: LevelSetPoint
    period_s: object
    segment_vertices: tuple          # ((p, q), ...) including the closing vertex
    closure: float
    margins: tuple                   # derivative-test margin at each vertex
    monodromy: Optional[AffinePiece] = field(default=None, repr=False)

    def to_json(self) -> dict:
        conv = str if arith.is_exact(self.base_point.p) else float
        return {
            "itinerary": [[list(c[0]), list(c[1])] for c in self.itinerary],
            "base_point": {"p": [conv(v) for v in self.base_point.p],
                           "q": [conv(v) for v in self.base_point.q],
                           "rho": conv(self.base_point.rho)},
            "period_s": conv(self.period_s),
            "vertices": [{"p": [conv(v) for v in p], "q": [conv(v) for v in q]}
                         for p, q in self.segment_vertices],
            "closure": float(self.closure),
            "margins": [float(m) for m in self.margins],
        }

    def polyline_rows(self):
        return [[float(v) for v in np.concatenate([p, q])] for p, q in self.segment_vertices]


def _tie_rows(spec, cell: Cell):
    """Linear equations ``(row, rhs)`` stating the ties of ``cell``."""
    Mx = spec.M.entries
    m, n = Mx.shape
    exact = spec.exact
    rows = []
    I = [i - 1 for i in cell[0]]
    J = [j - 1 for j in cell[1]]
    for i in I[1:]:
        rows.append(np.concatenate([arith.zeros(m, exact), Mx[i] - Mx[I[0]]]))
    for j in J[1:]:
        rows.append(np.concatenate([Mx[:, j] - Mx[:, J[0]], arith.zeros(n, exact)]))
    return rows


def periodic_orbit_solve(itinerary: Sequence[Cell], spec: DynamicsSpec, rho=1,
                         diagnostics: Optional[list] = None, tol: float = 1e-9
                         ) -> Optional[PeriodicOrbit]:
    """Fixed point of the composed crossing maps of a cyclic itinerary.

    The base point sits on the transition from the last cell to the first.
    Returns None when the system is singular or the solution does not
    realize the itinerary; the reason goes to ``diagnostics``.
    """
    _require_mixed(spec)
    cells = [tuple(tuple(c) for c in cell) for cell in itinerary]
    L = len(cells)
    exact = spec.exact
    rho = arith.to_scalar(rho, exact)
    note = diagnostics.append if diagnostics is not None else (lambda _: None)
    try:
        exits = [transition_hyperplane(spec, cells[k], cells[(k + 1) % L]) for k in range(L)]
        A, b = compose_transitions(spec, cells, exits)
    except LevelFlowError as exc:
        note({"reason": "composition", "detail": str(exc)})
        return None
    m, n = spec.M.shape
    d = m + n
    base = exits[-1]
    ln, lc = level_plane(spec, cells[0], rho)
    rows = [r for r in (A - arith.eye(d, exact))]
    rhs = [-v for v in b]
    rows += [np.concatenate([arith.ones(m, exact), arith.zeros(n, exact)]),
             np.concatenate([arith.zeros(m, exact), arith.ones(n, exact)]), base.normal, ln]
    rhs += [arith.to_scalar(1, exact), arith.to_scalar(1, exact), base.offset, lc]
    for r in _tie_rows(spec, cells[0]) + _tie_rows(spec, cells[-1]):
        rows.append(r)
        rhs.append(arith.to_scalar(0, exact))
    a_sys = np.array(rows, dtype=object if exact else float)
    b_sys = np.array(rhs, dtype=object if exact else float)
    try:
        z, resid = arith.solve_consistent(a_sys, b_sys)
    except arith.SingularMatrixError:
        note({"reason": "singular", "detail": "fixed-point system is rank deficient (parabolic piece)"})
        return None
    if (resid != 0) if exact else resid > tol:
        note({"reason": "inconsistent", "detail": f"fixed-point residual {float(resid):.3e}"})
        return None
    return validate_periodic(cells, spec, z[:m], z[m:], rho, note, tol)


def validate_periodic(cells, spec, p0, q0, rho, note=lambda _: None, tol=1e-9):
    """Flow one cycle from ``(p0, q0)`` and check itinerary, strict
    transversality at every vertex and closure."""
    L = len(cells)
    tied = (tuple(sorted({i - 1 for i in cells[-1][0]} | {i - 1 for i in cells[0][0]})),
            tuple(sorted({j - 1 for j in cells[-1][1]} | {j - 1 for j in cells[0][1]})))
    conts: list = []
    verts = [(p0, q0)]
    period = 0
    try:
        gen = iter_level(spec, p0, q0, 0, tied=tied, record=conts)
        for k in range(L):
            seg = next(gen)
            if seg.cell != cells[k]:
                note({"reason": "cell violation", "step": k, "expected": cells[k], "got": seg.cell,
                      "point": [float(v) for v in np.concatenate([seg.p_start, seg.q_start])]})
                return None
            if len(conts[-1].candidates) != 1:
                note({"reason": "ambiguous vertex", "step": k})
                return None
            verts.append((seg.p_end, seg.q_end))
            period = seg.s_exit
    except FlowError as exc:
        note({"reason": "flow failure", "detail": str(exc)})
        return None
    pe, qe = verts[-1]
    closure = float(np.max(np.abs(arith.to_float(np.concatenate([pe - p0, qe - q0])))))
    if closure > tol:
        note({"reason": "no closure", "closure": closure})
        return None
    margins = tuple(float(c.margin) for c in conts[:L])
    if not all(mg > 0 for mg in margins):
        note({"reason": "non-transversal vertex", "margins": margins})
        return None
    return PeriodicOrbit(tuple(cells), LevelSetPoint(p0, q0, rho), period, tuple(verts),
                         closure, margins)


def hexagon_itinerary(spec: DynamicsSpec, rho=1) -> Optional[List[Cell]]:
    """Seed itinerary for a sliding hexagon of a 3 x 3 game.

    Ansatz: vertices alternate between points with ``q = q_bar`` (two
    columns tied at ``p'M = lambda - rho``) and points with ``p = p_bar``
    (two rows tied at ``Mq = mu + rho``); the edge joining vertex ``J`` to
    vertex ``I`` lies in the sliding cell ``(I, J)`` and must be parallel
    to that cell's sliding velocity.  The solver validates the result.
    """
    _require_mixed(spec)
    Mx = spec.M.entries
    m, n = Mx.shape
    exact = spec.exact
    rho = arith.to_scalar(rho, exact)
    if (m, n) != (3, 3):
        return None

    def vertex(pairs, side):
        out = {}
        for S in pairs:
            a = arith.zeros((3, 3), exact)
            rhs = arith.zeros(3, exact)
            a[0, :] = arith.ones(3, exact)
            for r, s_idx in enumerate(S):
                a[r + 1, :] = Mx[:, s_idx] if side == P else Mx[s_idx, :]
                rhs[r + 1] = -rho if side == P else rho
            try:
                v = arith.solve(a, rhs)
            except arith.SingularMatrixError:
                continue
            vals = v @ Mx if side == P else Mx @ v
            other = [l for l in range(3) if l not in S]
            ok = all(vals[l] > -rho for l in other) if side == P else \
                all(vals[l] < rho for l in other)
            if ok:
                out[S] = v
        return out

    pairs = list(itertools.combinations(range(3), 2))
    xv = vertex(pairs, P)          # keyed by column pair J
    yv = vertex(pairs, Q)          # keyed by row pair I
    zero = arith.zeros(3, exact)

    def parallel(cell, start, end):
        try:
            v = cell_velocity(spec, ((cell[0][0] + 1, cell[0][1] + 1),
                                     (cell[1][0] + 1, cell[1][1] + 1)))
        except FrameError:
            return False
        dvec = end - start
        k = int(np.argmax(np.abs(arith.to_float(dvec))))
        if dvec[k] == 0:
            return False
        c = v[k] / dvec[k]
        res = v - c * dvec
        small = (all(r == 0 for r in res) if exact
                 else float(np.max(np.abs(res))) <= 1e-9 * max(1.0, float(np.max(np.abs(v)))))
        return c > 0 and small

    edges = {}
    for J, x in xv.items():
        for I, y in yv.items():
            X = np.concatenate([x, zero])
            Y = np.concatenate([zero, y])
            if parallel((I, J), X, Y):
                edges.setdefault(("x", J), []).append((("y", I), (I, J)))
            if parallel((I, J), Y, X):
                edges.setdefault(("y", I), []).append((("x", J), (I, J)))
    for startJ in sorted(xv):
        path, node = [], ("x", startJ)
        seen = set()
        while node not in seen and node in edges:
            seen.add(node)
            nxt, cell = edges[node][0]
            path.append(cell)
            node = nxt
        if node == ("x", startJ) and len(path) == 6:
            return [(tuple(i + 1 for i in I), tuple(j + 1 for j in J)) for I, J in path]
    return None


def quadrilateral_itinerary(spec: DynamicsSpec, rho=1, start=None) -> List[Cell]:
    """Cells visited in one circuit of a 2 x 2 level set."""
    _require_mixed(spec)
    eq = spec.equilibrium
    if start is None:
        u = spec.M.vec([1, 0]) - eq.p_bar
        p, q = eq.p_bar + u, eq.q_bar + u
    else:
        p, q = start
    cells = []
    for seg in iter_level(spec, p, q):
        if cells and seg.cell == cells[0]:
            return cells
        cells.append(seg.cell)
        if len(cells) > 8:
            raise LevelFlowError("2 x 2 circuit did not close")
    return cells
