"""Global section spanned by the sliding hexagon and its return map.

The section is a fan of four triangles over the hexagon.  Each triangle
lies in the level set: ``H`` is convex, equals ``rho`` at the vertices, and
``rho`` at the centroid forces it to be constant on the triangle.  It also
lies in one indifference hyperplane, so the flow crosses it transversally.

The chart is area-true for the symplectic form: triangle ``k`` is laid out
with signed chart area ``omega(e1, e2) / 2``.  Return-map pieces therefore
have determinant one.  In exact mode the layout is rational, so the whole
return map stays exact.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Optional

import numpy as np

from . import arith
from .flow import DynamicsSpec, FlowError
from .annulus import AnnulusItinerary, RefinementFailure, match_depth, radial_curves, refine_along
from .game import P, Q
from .level import (AffinePiece, Hyperplane, NoReturnError,
                    PeriodicOrbit, SectionChart, compose_charted, first_return,
                    switching_hyperplane, transition_hyperplane)

log = logging.getLogger(__name__)

ELLIPTIC_TOL = 1e-6
EPS_BARY = 1e-10

# rational fan directions, 45 degrees apart
_FAN_DIRS = ((1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0))


class SectionError(FlowError):
    pass


def omega(spec: DynamicsSpec, u, w, A=None):
    """Symplectic form ``sum a_ij dp_i ^ dq_j`` on ambient vectors."""
    a = spec.M.entries if A is None else A
    m = spec.M.rows
    return u[:m] @ a @ w[m:] - w[:m] @ a @ u[m:]


@dataclass(frozen=True)
class Triangle:
    vertices: tuple           # three ambient points
    plane: Hyperplane         # indifference hyperplane containing it
    layout: tuple             # 2D chart images of the three vertices

    @property
    def edges(self):
        v0, v1, v2 = self.vertices
        return v1 - v0, v2 - v0


@dataclass(frozen=True)
class Section:
    """Fan of triangles spanning a hexagonal periodic orbit."""
    triangles: tuple
    boundary: tuple           # hexagon vertices in cyclic order
    rho: object
    spec: DynamicsSpec = field(repr=False, compare=False)
    orientation: int = 1

    @property
    def exact(self) -> bool:
        return self.spec.exact

    def to_ambient(self, u, k: Optional[int] = None):
        """Ambient point of chart point ``u`` (triangle found if not given)."""
        u = _vec(u, self.exact)
        if k is None:
            k = self.locate_chart(u)
            if k is None:
                raise SectionError("chart point outside the section")
        tri = self.triangles[k]
        w = _bary2(tri.layout, u, self.exact)
        e1, e2 = tri.edges
        return tri.vertices[0] + w[0] * e1 + w[1] * e2

    def to_chart(self, z, k: Optional[int] = None):
        if k is None:
            k = self.locate_ambient(z)
            if k is None:
                raise SectionError("point is not on the section")
        tri = self.triangles[k]
        w = self._ambient_bary(tri, z)
        l0, l1, l2 = tri.layout
        return l0 + w[0] * (l1 - l0) + w[1] * (l2 - l0)

    def _ambient_bary(self, tri, z):
        e1, e2 = tri.edges
        d = z - tri.vertices[0]
        g = np.array([[e1 @ e1, e1 @ e2], [e2 @ e1, e2 @ e2]], dtype=object if self.exact else float)
        rhs = np.array([e1 @ d, e2 @ d], dtype=object if self.exact else float)
        return arith.solve(g, rhs)

    def _inside(self, tri, z, tol):
        w = self._ambient_bary(tri, z)
        e1, e2 = tri.edges
        resid = z - tri.vertices[0] - w[0] * e1 - w[1] * e2
        r = max(abs(v) for v in resid)
        ok_plane = (r == 0) if self.exact else float(r) <= tol * 10
        return ok_plane and w[0] >= -tol and w[1] >= -tol and w[0] + w[1] <= 1 + tol, w

    def locate_ambient(self, z, tol: float = EPS_BARY) -> Optional[int]:
        t = 0 if self.exact else tol
        for k, tri in enumerate(self.triangles):
            if self._inside(tri, z, t)[0]:
                return k
        return None

    def locate_chart(self, u, tol: float = EPS_BARY) -> Optional[int]:
        t = 0 if self.exact else tol
        for k, tri in enumerate(self.triangles):
            w = _bary2(tri.layout, u, self.exact)
            if w[0] >= -t and w[1] >= -t and w[0] + w[1] <= 1 + t:
                return k
        return None

    def crossing(self, p, q, vp, vq, length, skip_start: bool = False):
        """Earliest parameter at which the segment meets a triangle."""
        best = None
        z0 = np.concatenate([p, q])
        v = np.concatenate([vp, vq])
        for tri in self.triangles:
            pl = tri.plane
            slope = pl.normal @ v
            if slope == 0:
                continue
            s = -pl.value(p, q) / slope
            floor = 0 if self.exact else 1e-12 * max(1.0, float(abs(length)))
            if (s <= floor) if skip_start else (s < -floor):
                continue
            if s > length + floor or (best is not None and s >= best):
                continue
            s = min(max(s, 0 * s), length)
            if self._inside(tri, z0 + s * v, 0 if self.exact else 1e-9)[0]:
                best = s
        return best

    def boundary_distance(self, u) -> float:
        """Chart distance to the hexagon's image."""
        pts = self.chart_polygon()
        u = np.asarray(arith.to_float(_vec(u, self.exact)))
        best = np.inf
        for a, b in zip(pts, pts[1:] + pts[:1]):
            d = b - a
            t = np.clip((u - a) @ d / (d @ d), 0.0, 1.0)
            best = min(best, float(np.linalg.norm(u - a - t * d)))
        return best

    def chart_polygon(self) -> list:
        """Hexagon vertices in chart coordinates (float), cyclic order."""
        lay = [np.asarray(arith.to_float(t.layout[1])) for t in self.triangles]
        lay.append(np.asarray(arith.to_float(self.triangles[-1].layout[2])))
        return [np.asarray(arith.to_float(self.triangles[0].layout[0]))] + lay

    def area(self):
        tot = 0
        for tri in self.triangles:
            l0, l1, l2 = tri.layout
            tot = tot + _cross(l1 - l0, l2 - l0) / 2
        return tot

    def to_json(self) -> dict:
        conv = str if self.exact else float
        return {
            "rho": conv(self.rho),
            "orientation": self.orientation,
            "boundary": [[conv(v) for v in z] for z in self.boundary],
            "triangles": [{"vertices": [[conv(v) for v in z] for z in t.vertices],
                           "plane": t.plane.to_json(),
                           "chart": [[conv(v) for v in u] for u in t.layout]}
                          for t in self.triangles],
        }


def _vec(u, exact):
    return arith.as_array(u, exact)


def _cross(a, b):
    return a[0] * b[1] - a[1] * b[0]


def _bary2(layout, u, exact):
    l0, l1, l2 = layout
    a = np.array([[l1[0] - l0[0], l2[0] - l0[0]], [l1[1] - l0[1], l2[1] - l0[1]]],
                 dtype=object if exact else float)
    return arith.solve(a, u - l0)


def _common_tie(spec: DynamicsSpec, verts, exact) -> Optional[Hyperplane]:
    """An indifference hyperplane containing all three vertices."""
    Mx = spec.M.entries
    m, n = Mx.shape
    for side, size in ((P, m), (Q, n)):
        for a, b in itertools.combinations(range(1, size + 1), 2):
            hp = switching_hyperplane(spec, side, a, b)
            vals = [hp.value(z[:m], z[m:]) for z in verts]
            if exact:
                if all(v == 0 for v in vals):
                    return hp
            elif max(abs(float(v)) for v in vals) <= 1e-9:
                return hp
    return None


def _layout(areas, exact):
    """Fan layout with prescribed doubled signed areas ``areas[k]``.

    Rays follow fixed rational directions; radii satisfy
    ``r_k r_{k+1} det(D_k, D_{k+1}) = area_k`` with ``r_0`` chosen to
    balance the radii (rounded to a small rational in exact mode).
    """
    dirs = [np.array([Fraction(a), Fraction(b)], dtype=object) if exact else np.array([a, b], float)
            for a, b in _FAN_DIRS]
    dets = [_cross(dirs[k], dirs[k + 1]) for k in range(len(areas))]
    ratio = [areas[k] / dets[k] for k in range(len(areas))]
    # log r_k alternates: r_{k+1} = ratio_k / r_k; pick r_0 minimizing spread
    logs = np.log(np.abs([float(v) for v in ratio]))
    # log r_k = (-1)^k log r_0 + c_k
    c = [0.0]
    for k in range(len(ratio)):
        c.append(logs[k] - c[-1])
    sgn = np.array([(-1) ** k for k in range(len(c))], float)
    lr0 = -float(np.mean(sgn * np.array(c)))
    r0 = Fraction(float(np.exp(lr0))).limit_denominator(1000) if exact else float(np.exp(lr0))
    radii = [r0]
    for k in range(len(ratio)):
        radii.append(ratio[k] / radii[-1])
    zero = np.array([Fraction(0), Fraction(0)], dtype=object) if exact else np.zeros(2)
    pts = [radii[k] * dirs[k] for k in range(len(radii))]
    return zero, pts


def build_section(gamma: PeriodicOrbit, spec: DynamicsSpec, center: int = 0, A=None,
                  tol: float = 1e-8) -> Section:
    """Four-triangle disc spanning the hexagon ``gamma``.

    ``center`` picks the fan apex among the six vertices.  Every triangle
    is checked to lie in the level set (centroid test) and in an
    indifference hyperplane; all must carry the same sign of ``omega``.
    """
    verts = [np.concatenate([p, q]) for p, q in gamma.segment_vertices]
    if len(verts) == 7:
        verts = verts[:6]
    if len(verts) != 6:
        raise SectionError("gamma is not a hexagon")
    exact = spec.exact
    rho = gamma.base_point.rho
    m = spec.M.rows
    c = verts[center]
    tris = []
    areas = []
    for k in range(1, 5):
        a, b = verts[(center + k) % 6], verts[(center + k + 1) % 6]
        cen = (c + a + b) / 3
        h = spec.hamiltonian(cen[:m] - spec.equilibrium.p_bar, cen[m:] - spec.equilibrium.q_bar)
        if (h != rho) if exact else abs(float(h - rho)) > tol:
            raise SectionError(f"triangle {k} leaves the level set (H = {float(h):.6g})")
        hp = _common_tie(spec, (c, a, b), exact)
        if hp is None:
            raise SectionError(f"triangle {k} is not contained in an indifference hyperplane")
        tris.append((c, a, b, hp))
        areas.append(omega(spec, a - c, b - c, A))
    signs = {1 if float(x) > 0 else -1 for x in areas}
    if len(signs) != 1 or any(x == 0 for x in areas):
        raise SectionError("triangles are not coherently transversal to the flow")
    orientation = signs.pop()
    zero, pts = _layout([x * orientation for x in areas], exact)
    triangles = tuple(Triangle((c, a, b), hp, (zero, pts[k], pts[k + 1]))
                      for k, (c, a, b, hp) in enumerate(tris))
    return Section(triangles, tuple(verts), rho, spec, orientation)


# -- return map ---------------------------------------------------------------

@dataclass(frozen=True)
class ReturnResult:
    point: np.ndarray         # chart
    return_s: object
    itinerary: tuple
    triangle_in: int
    triangle_out: int


def return_map_S(point, section: Section, spec: DynamicsSpec, s_cap: float = 1e4,
                 max_segments: int = 10 ** 4) -> ReturnResult:
    """First return of a chart point to the section."""
    u = _vec(point, section.exact)
    k = section.locate_chart(u)
    if k is None:
        raise SectionError("point outside the section")
    z = section.to_ambient(u, k)
    m = spec.M.rows
    try:
        pp, qq, s, itin = first_return(section, (z[:m], z[m:]), spec, s_cap, max_segments)
    except NoReturnError as exc:
        raise SectionError(f"no return to the section within the cap "
                           f"(itinerary so far {len(exc.itinerary)} cells)") from exc
    z1 = np.concatenate([pp, qq])
    k1 = section.locate_ambient(z1, 1e-8)
    if k1 is None:
        raise SectionError("return point not located on the section")
    return ReturnResult(section.to_chart(z1, k1), s, tuple(itin), k, k1)


def return_piece(section: Section, spec: DynamicsSpec, res: ReturnResult) -> AffinePiece:
    """Affine piece of the return map on the cell of ``res`` (chart
    coordinates of the area-true layout)."""
    itin = list(res.itinerary)
    exits = [transition_hyperplane(spec, itin[k], itin[k + 1]) for k in range(len(itin) - 1)]
    out_tri = section.triangles[res.triangle_out]
    exits.append(out_tri.plane)
    cin = triangle_chart(section.triangles[res.triangle_in])
    cout = triangle_chart(out_tri)
    mat, off = compose_charted(spec, itin, exits, section.rho, cin, cout)
    return AffinePiece(mat, off, tuple(itin), res.triangle_in, res.triangle_out,
                       None, None, cin, cout)


def triangle_chart(tri: Triangle) -> SectionChart:
    """Affine chart of a triangle's plane in layout coordinates."""
    e1, e2 = tri.edges
    E = np.column_stack([arith.to_float(e1), arith.to_float(e2)])
    l0, l1, l2 = (np.asarray(arith.to_float(v)) for v in tri.layout)
    Linv = np.linalg.inv(np.column_stack([l1 - l0, l2 - l0]))
    basis = E @ Linv
    return SectionChart(np.asarray(arith.to_float(tri.vertices[0])) - basis @ l0, basis)


@dataclass
class SectionOrbit:
    samples: list
    return_times: list
    itineraries: list

    def to_rows(self):
        return [[float(u[0]), float(u[1]), float(s)]
                for u, s in zip(self.samples, [0.0] + list(self.return_times))]


def iterate_return(point, section: Section, spec: DynamicsSpec, n: int) -> SectionOrbit:
    u = _vec(point, section.exact)
    samples, times, itins = [u], [], []
    for _ in range(n):
        r = return_map_S(u, section, spec)
        u = r.point
        samples.append(u)
        times.append(r.return_s)
        itins.append(r.itinerary)
    return SectionOrbit(samples, times, itins)


# -- periodic points ----------------------------------------------------------

@dataclass(frozen=True)
class PeriodicPoint:
    point: np.ndarray
    period: int
    eigenvalues: np.ndarray
    kind: str                 # "elliptic" | "saddle" | "parabolic"
    residual: float
    itinerary: tuple

    def to_json(self) -> dict:
        return {"point": [float(v) for v in self.point], "period": self.period,
                "eigenvalues": [[float(e.real), float(e.imag)] for e in self.eigenvalues],
                "kind": self.kind, "residual": self.residual}


def classify(eigs, tol: float = ELLIPTIC_TOL) -> str:
    mods = np.abs(eigs)
    if np.all(np.abs(mods - 1) <= tol):
        if np.all(np.abs(eigs - 1) <= tol):
            return "parabolic"
        return "elliptic"
    return "saddle"


def compose_return(section: Section, spec: DynamicsSpec, u, k: int):
    """``k``-fold return from ``u``: (image, [pieces], [results])."""
    pieces, results = [], []
    cur = u
    for _ in range(k):
        r = return_map_S(cur, section, spec)
        pieces.append(return_piece(section, spec, r))
        results.append(r)
        cur = r.point
    return cur, pieces, results


def _compose_pieces(pieces):
    mat = np.eye(2)
    off = np.zeros(2)
    for pc in pieces:
        mat = pc.matrix @ mat
        off = pc.matrix @ off + pc.offset
    return mat, off


def find_periodic_points(k: int, region, section: Section, spec: DynamicsSpec,
                         samples: int = 12, tol: float = 1e-8) -> List[PeriodicPoint]:
    """Periodic points of exact period ``k`` seeded from a chart box.

    ``region`` is ``((u0_min, u0_max), (u1_min, u1_max))``.  Each sampled
    point's ``k``-step itinerary gives a composed affine piece whose fixed
    point is solved and re-verified by direct iteration.
    """
    if k < 1:
        raise ValueError("period must be at least 1")
    (a0, a1), (b0, b1) = region
    found: List[PeriodicPoint] = []
    tried = set()
    for s0, s1 in itertools.product(np.linspace(a0, a1, samples), np.linspace(b0, b1, samples)):
        u = np.array([s0, s1])
        if section.locate_chart(u if not section.exact else _vec(u, True)) is None:
            continue
        try:
            _, pieces, results = compose_return(section, spec, u, k)
        except (FlowError, SectionError, np.linalg.LinAlgError):
            continue
        key = tuple((r.itinerary, r.triangle_in, r.triangle_out) for r in results)
        if key in tried:
            continue
        tried.add(key)
        pp = _solve_fixed(section, spec, pieces, results, k, region, tol)
        if pp is not None and not any(np.linalg.norm(pp.point - f.point) <= 1e-7 for f in found):
            found.append(pp)
    return found


def _solve_fixed(section, spec, pieces, results, k, region, tol):
    mat, off = _compose_pieces(pieces)
    try:
        fix = np.linalg.solve(np.eye(2) - mat, off)
    except np.linalg.LinAlgError:
        return None
    (a0, a1), (b0, b1) = region
    if not (a0 - 1e-9 <= fix[0] <= a1 + 1e-9 and b0 - 1e-9 <= fix[1] <= b1 + 1e-9):
        return None
    try:
        img, _, res2 = compose_return(section, spec, fix, k)
    except (FlowError, SectionError):
        return None
    if [r.itinerary for r in res2] != [r.itinerary for r in results]:
        return None
    resid = float(np.max(np.abs(np.asarray(arith.to_float(img)) - fix)))
    if resid > tol:
        return None
    # exact period: no shorter return closes
    for j in range(1, k):
        if k % j == 0:
            img_j, _, _ = compose_return(section, spec, fix, j)
            if float(np.max(np.abs(np.asarray(arith.to_float(img_j)) - fix))) <= tol:
                return None
    eigs = np.linalg.eigvals(mat)
    return PeriodicPoint(fix, k, eigs, classify(eigs), resid,
                         tuple(r.itinerary for r in results))


# -- elliptic islands ---------------------------------------------------------

@dataclass(frozen=True)
class EggRegion:
    """Invariant ellipse ``(u - c)' Q (u - c) <= r^2`` of an elliptic
    period-2 point, and its image under one return."""
    center: np.ndarray
    form: np.ndarray
    radius: float
    partner_center: np.ndarray
    partner_form: np.ndarray

    def contains(self, u, slack: float = 1e-6) -> bool:
        return self._inside(u, self.center, self.form, slack) or \
            self._inside(u, self.partner_center, self.partner_form, slack)

    def _inside(self, u, c, Qf, slack):
        d = np.asarray(u, dtype=float) - c
        return float(d @ Qf @ d) <= self.radius ** 2 * (1 + slack)

    def boundary(self, n: int = 64, scale: float = 1.0, partner: bool = False):
        c, Qf = (self.partner_center, self.partner_form) if partner else (self.center, self.form)
        w, V = np.linalg.eigh(Qf)
        th = np.linspace(0, 2 * np.pi, n, endpoint=False)
        circ = np.stack([np.cos(th), np.sin(th)])
        return (c[:, None] + V @ (circ * (scale * self.radius / np.sqrt(w))[:, None])).T


def invariant_form(L: np.ndarray) -> np.ndarray:
    """Positive form ``Q`` with ``L' Q L = Q`` for an elliptic ``L``."""
    eigs, vecs = np.linalg.eig(L)
    v = vecs[:, 0]
    R = np.column_stack([v.real, v.imag])
    Rinv = np.linalg.inv(R)
    Qf = Rinv.T @ Rinv
    return Qf / np.sqrt(np.linalg.det(Qf))


def egg_region(pp: PeriodicPoint, section: Section, spec: DynamicsSpec,
               n_boundary: int = 48, r_max: float = 5.0, iters: int = 24) -> EggRegion:
    """Largest invariant ellipse about an elliptic period-2 point on which
    the two-step itinerary is constant (bisection on the radius)."""
    if pp.kind != "elliptic" or pp.period != 2:
        raise SectionError("egg regions are built around elliptic period-2 points")
    _, pieces, results = compose_return(section, spec, pp.point, 2)
    mat, _ = _compose_pieces(pieces)
    Qf = invariant_form(mat)
    key = [r.itinerary for r in results]
    probe = EggRegion(pp.point, Qf, 1.0, pp.point, Qf)

    def ok(r):
        for u in probe.boundary(n_boundary, r):
            try:
                _, _, res = compose_return(section, spec, u, 2)
            except (FlowError, SectionError):
                return False
            if [x.itinerary for x in res] != key:
                return False
        return True

    lo, hi = 0.0, r_max
    while ok(hi) and hi < 1e3:
        lo, hi = hi, 2 * hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    L1 = pieces[0].matrix
    c1 = pieces[0](pp.point)
    L1inv = np.linalg.inv(L1)
    return EggRegion(pp.point, Qf, lo, c1, L1inv.T @ Qf @ L1inv)


def egg_containment(egg: EggRegion, section: Section, spec: DynamicsSpec, start,
                    n: int = 1000) -> tuple:
    """Iterate ``n`` returns from ``start``; returns (all_inside, first_exit)."""
    u = np.asarray(start, dtype=float)
    for i in range(n):
        u = np.asarray(arith.to_float(return_map_S(u, section, spec).point))
        if not egg.contains(u):
            return False, i + 1
    return True, None


# -- transversal section near the hexagon -------------------------------------

@dataclass(frozen=True)
class TransversalSection:
    """Small disc ``Z`` across one sliding edge of the hexagon.

    The chart is ``u = (g_P, g_Q)``, the two payoff gaps that vanish along
    the edge; ``u = 0`` is the hexagon's crossing point ``x0``.  The plane
    ``normal . z = offset`` is chosen with ``normal . v = 1`` for the four
    cell velocities around the edge, so every nearby orbit crosses it
    transversally.  Crossings count only inside ``|u|_1 <= radius``.
    """
    x0: np.ndarray
    normal: np.ndarray
    offset: float
    gaps: np.ndarray          # 2 x (m+n), rows g_P and g_Q
    rows: tuple               # 0-based (i1, i2) of the edge
    cols: tuple               # 0-based (j1, j2)
    rho: float
    radius: float
    spec: DynamicsSpec = field(repr=False, compare=False)

    def cell_of(self, u):
        """0-based transversal cell ``(i, j)`` of chart point ``u``."""
        i = self.rows[0] if u[0] > 0 else self.rows[1]
        j = self.cols[1] if u[1] > 0 else self.cols[0]
        return i, j

    def to_ambient(self, u):
        u = np.asarray(u, dtype=float)
        i, j = self.cell_of(u)
        Mx = np.asarray(self.spec.M.entries, dtype=float)
        m, n = Mx.shape
        A = np.array([np.r_[np.ones(m), np.zeros(n)], np.r_[np.zeros(m), np.ones(n)],
                      self.normal, np.r_[-Mx[:, j], Mx[i]], self.gaps[0], self.gaps[1]])
        if A.shape[0] != A.shape[1]:
            raise SectionError("transversal chart needs a 3x3 game")
        return np.linalg.solve(A, np.array([1.0, 1.0, self.offset, self.rho, u[0], u[1]]))

    def to_chart(self, z):
        return self.gaps @ np.asarray(z, dtype=float)

    def crossing(self, p, q, vp, vq, length, skip_start: bool = False):
        hp = Hyperplane(self.normal, self.offset, 1)
        s = hp.crossing(p, q, vp, vq, length, skip_start)
        if s is None:
            return None
        z = np.concatenate([p + s * vp, q + s * vq])
        return s if np.abs(self.to_chart(z)).sum() <= self.radius else None

    def to_json(self) -> dict:
        return {"x0": [float(v) for v in self.x0], "normal": [float(v) for v in self.normal],
                "offset": float(self.offset), "rows": [r + 1 for r in self.rows],
                "cols": [c + 1 for c in self.cols], "rho": float(self.rho),
                "radius": float(self.radius)}


def transversal_section(gamma: PeriodicOrbit, spec: DynamicsSpec, edge: int = 0,
                        radius: float = 0.5) -> TransversalSection:
    """Disc across edge ``edge`` of a sliding hexagon, centred at its midpoint."""
    cell = gamma.itinerary[edge]
    if len(cell[0]) != 2 or len(cell[1]) != 2:
        raise SectionError("the transversal chart needs a sliding edge (two ties per side)")
    verts = [np.asarray(arith.to_float(np.concatenate([p, q])), dtype=float)
             for p, q in gamma.segment_vertices]
    x0 = (verts[edge] + verts[edge + 1]) / 2
    (i1, i2), (j1, j2) = [tuple(k - 1 for k in side) for side in cell]
    Mx = np.asarray(spec.M.entries, dtype=float)
    m, n = Mx.shape
    from .level import cell_velocity
    vels = [np.asarray(arith.to_float(cell_velocity(spec, ((i + 1,), (j + 1,)))), dtype=float)
            for i in (i1, i2) for j in (j1, j2)]
    A = np.array(vels + [np.r_[np.ones(m), np.zeros(n)], np.r_[np.zeros(m), np.ones(n)]])
    b = np.r_[np.ones(4), 0.0, 0.0]
    normal, *_ = np.linalg.lstsq(A, b, rcond=None)
    if np.max(np.abs(A @ normal - b)) > 1e-9:
        raise SectionError("no plane is crossed at unit rate by all four cells")
    gaps = np.array([np.r_[np.zeros(m), Mx[i1] - Mx[i2]],
                     np.r_[Mx[:, j1] - Mx[:, j2], np.zeros(n)]])
    return TransversalSection(x0, normal, float(normal @ x0), gaps, (i1, i2), (j1, j2),
                              float(arith.to_float(gamma.base_point.rho)), radius, spec)


def local_return(u, Z: TransversalSection, cap: int = 10 ** 8, s_max: float = 100.0):
    """First return of chart point ``u`` to ``Z``: ``(u', return_s)``.

    Transversal stretches run in the compiled kernel; at near-simultaneous
    exits the general level flow takes over until the cell is transversal
    again.  Raises SectionError when no return happens within ``cap``
    segments or flow time ``s_max``.
    """
    from ._fastflow import TIE, run_level
    from .level import iter_level
    spec = Z.spec
    m = spec.M.rows
    eq = np.concatenate([np.asarray(arith.to_float(spec.equilibrium.p_bar), dtype=float),
                         np.asarray(arith.to_float(spec.equilibrium.q_bar), dtype=float)])
    z = Z.to_ambient(u) - eq
    i, j = Z.cell_of(u)
    s = 0.0
    count = 0
    first = True
    while count < cap and s < s_max:
        if i >= 0:
            res = run_level(spec, z[:m], z[m:], i, j, Z.normal, Z.offset, 1, Z.gaps, Z.radius,
                            cap - count, s_max - s, record=False)
            count += res.count
            z = np.concatenate([res.x, res.y])
            if res.done:
                return Z.to_chart(z + eq), s + res.s
            s += res.s
            first = first and res.count == 0
            if res.status != TIE:
                break
        # hand over to the general flow for the segments around the tie
        i = j = -1
        gen = iter_level(spec, z[:m] + eq[:m], z[m:] + eq[m:], 0)
        for k, seg in enumerate(gen):
            if k > 0 and len(seg.cell[0]) == 1 and len(seg.cell[1]) == 1:
                i, j = seg.cell[0][0] - 1, seg.cell[1][0] - 1
                z = np.concatenate([seg.p_start, seg.q_start]) - eq
                break
            hit = Z.crossing(seg.p_start, seg.q_start, seg.direction[0], seg.direction[1],
                             seg.length, skip_start=first)
            first = False
            count += 1
            if hit is not None:
                pp, qq = seg.at(seg.s_enter + hit)
                return Z.to_chart(np.concatenate([pp, qq])), s + float(seg.s_enter + hit)
            if count >= cap or s + float(seg.s_exit) >= s_max:
                break
        else:
            break
        s += float(seg.s_enter)
    raise SectionError(f"no return to the transversal section after {count} segments")


# -- annulus itineraries ------------------------------------------------------

def estimate_annulus_ratio(Z: TransversalSection, radii=(1e-1, 1e-2, 1e-3),
                           samples: int = 100, seed: int = 0) -> float:
    """``exp(-median |log(|R(u)| / |u|)|)`` over sampled chart points.

    The typical factor by which one return changes the distance to the
    hexagon; one annulus step then matches one typical return.
    """
    rng = np.random.default_rng(seed)
    logs = []
    for rad in radii:
        for th in rng.uniform(0, 2 * np.pi, samples):
            u = rad * np.array([np.cos(th), np.sin(th)]) / (abs(np.cos(th)) + abs(np.sin(th)))
            try:
                v, _ = local_return(u, Z)
            except SectionError:
                continue
            logs.append(np.log(np.abs(v).sum() / np.abs(u).sum()))
    if not logs:
        raise SectionError("no returns sampled near the hexagon")
    return float(np.exp(-np.median(np.abs(logs))))


def realize_annulus_itinerary(target: AnnulusItinerary, L: int, Z: TransversalSection,
                              budget: int = 20000, curves: int = 16):
    """Chart point whose first ``L`` returns visit ``A_{n(0)}, ..., A_{n(L)}``.

    Raises RefinementFailure with the deepest realized prefix when the
    search runs dry.
    """
    witness, depth, _ = refine_along(target, L, lambda u: local_return(u, Z)[0],
                                     radial_curves(target, curves), errors=(FlowError,),
                                     budget=budget)
    if witness is None:
        raise RefinementFailure(f"refinement emptied at depth {depth} of {L}", depth)
    return witness


def verify_annulus_witness(u, target: AnnulusItinerary, L: int, Z: TransversalSection) -> bool:
    """Re-iterate ``u`` and check the whole index sequence."""
    return match_depth(u, target, lambda v: local_return(v, Z)[0], L, (FlowError,)) > L
