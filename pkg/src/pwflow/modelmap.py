"""Closed-form random-walk model ``F(z) = S R_{1/|z|}(z)`` of the return
map near the hexagon.

``|z| = |z1| + |z2|`` is the l1 norm and ``R_theta`` moves a point along its
l1 circle (a diamond).  The circle is parametrized by piecewise-linear
arclength with each edge spanning a quarter turn, counterclockwise, so
``R`` has period ``2 pi``, keeps every diamond invariant and commutes with
positive scaling.  ``S`` is a diagonal saddle, ``diag(2, 1/2)`` by default.

Internally positions are kept in quarter turns ``w in [0, 4)``.  In exact
mode ``pi`` is the rational value of the double nearest to it, so every
operation is rational and norm preservation is exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Optional

import mpmath
import numpy as np

from .annulus import AnnulusItinerary, RefinementFailure, match_depth, radial_curves, refine_along

PI_Q = Fraction(math.pi)          # exact-mode stand-in for pi
_DIRS = ((1, 0), (0, 1), (-1, 0), (0, -1))


class ModelMapError(ValueError):
    pass


@dataclass(frozen=True)
class L1Point:
    z: tuple
    norm1: object = field(default=None)

    def __post_init__(self):
        z = tuple(self.z)
        if len(z) != 2:
            raise ModelMapError("model-map points are two-dimensional")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "norm1", abs(z[0]) + abs(z[1]))

    @property
    def exact(self) -> bool:
        return isinstance(self.z[0], Fraction)

    def array(self) -> np.ndarray:
        return np.array([float(self.z[0]), float(self.z[1])])


def _point(z) -> L1Point:
    return z if isinstance(z, L1Point) else L1Point(tuple(z))


@dataclass(frozen=True)
class ModelMapSpec:
    saddle: tuple = (2, Fraction(1, 2))     # diagonal entries
    exact: bool = False
    ratio: float = 0.5

    def __post_init__(self):
        a, b = self.saddle
        if a <= 0 or b <= 0:
            raise ModelMapError("saddle entries must be positive")
        if self.exact:
            object.__setattr__(self, "saddle", (Fraction(a), Fraction(b)))
        else:
            object.__setattr__(self, "saddle", (float(a), float(b)))

    @property
    def det(self):
        return self.saddle[0] * self.saddle[1]

    def to_json(self) -> dict:
        conv = str if self.exact else float
        return {"saddle": [conv(v) for v in self.saddle], "exact": self.exact,
                "ratio": self.ratio, "rotation": "l1-arclength, quarter turn per edge, ccw"}


# -- the l1 rotation ----------------------------------------------------------

def l1_position(z) -> object:
    """Position of ``z`` on its diamond in quarter turns, in ``[0, 4)``."""
    z1, z2 = z
    rho = abs(z1) + abs(z2)
    if rho == 0:
        raise ModelMapError("the origin has no position on an l1 circle")
    if z1 > 0 and z2 >= 0:
        return z2 / rho
    if z1 <= 0 and z2 > 0:
        return 1 + (-z1) / rho
    if z1 < 0 and z2 <= 0:
        return 2 + (-z2) / rho
    return 3 + z1 / rho


def l1_from_position(w, rho):
    """Point at quarter-turn position ``w`` on the diamond of radius ``rho``."""
    k = int(math.floor(w)) % 4
    tau = w - math.floor(w)
    (a1, a2), (b1, b2) = _DIRS[k], _DIRS[(k + 1) % 4]
    return (rho * ((1 - tau) * a1 + tau * b1), rho * ((1 - tau) * a2 + tau * b2))


def _quarters(theta, exact):
    if exact:
        return Fraction(theta) * 2 / PI_Q
    if isinstance(theta, mpmath.mpf):
        return theta * 2 / mpmath.pi
    return float(theta) * 2 / math.pi


def _rotate(z, theta, exact):
    rho = abs(z[0]) + abs(z[1])
    w = l1_position(z) + _quarters(theta, exact)
    w = w % 4
    return l1_from_position(w, rho)


def l1_rotate(z, theta) -> L1Point:
    """Move ``z`` along its l1 circle by parameter ``theta`` (period ``2 pi``)."""
    pt = _point(z)
    if pt.norm1 == 0:
        raise ModelMapError("cannot rotate the origin")
    return L1Point(_rotate(pt.z, theta, pt.exact))


# -- the model map ------------------------------------------------------------

def _coerce(z, spec: ModelMapSpec):
    pt = _point(z)
    if spec.exact and not pt.exact:
        pt = L1Point((Fraction(pt.z[0]), Fraction(pt.z[1])))
    if not spec.exact and pt.exact:
        pt = L1Point((float(pt.z[0]), float(pt.z[1])))
    return pt


def model_map_step(z, spec: ModelMapSpec = ModelMapSpec()) -> L1Point:
    """``F(z) = S R_{1/|z|}(z)``; the origin is excluded."""
    pt = _coerce(z, spec)
    if pt.norm1 == 0:
        raise ModelMapError("the model map is not defined at the origin")
    w = _rotate(pt.z, 1 / pt.norm1, spec.exact)
    a, b = spec.saddle
    return L1Point((a * w[0], b * w[1]))


def model_map_inverse(w, spec: ModelMapSpec = ModelMapSpec()) -> L1Point:
    """``F^{-1}(w) = R_{-1/|v|}(v)`` with ``v = S^{-1} w``; rotation keeps
    ``|v| = |z|``."""
    pt = _coerce(w, spec)
    if pt.norm1 == 0:
        raise ModelMapError("the model map is not defined at the origin")
    a, b = spec.saddle
    v = (pt.z[0] / a, pt.z[1] / b)
    rho = abs(v[0]) + abs(v[1])
    return L1Point(_rotate(v, -1 / rho, spec.exact))


def model_orbit(z, n: int, spec: ModelMapSpec = ModelMapSpec()) -> List[L1Point]:
    out = [_coerce(z, spec)]
    for _ in range(n):
        out.append(model_map_step(out[-1], spec))
    return out


def circle_images(radius: float = 1.0, iterates: int = 6, n: int = 2000,
                  spec: ModelMapSpec = ModelMapSpec()) -> List[np.ndarray]:
    """Images of the l1 circle of ``radius`` under ``F, F^2, ...`` (float)."""
    fspec = ModelMapSpec(spec.saddle, False, spec.ratio)
    w = np.linspace(0, 4, n, endpoint=False)
    pts = [l1_from_position(x, radius) for x in w]
    out = [np.array(pts)]
    for _ in range(iterates):
        pts = [model_map_step(p, fspec).z for p in pts]
        out.append(np.array(pts))
    return out


# -- fixed points -------------------------------------------------------------

def fixed_point_rays(spec: ModelMapSpec = ModelMapSpec()) -> List[tuple]:
    """Unit-l1 directions ``d`` with ``|S^{-1} d| = |d|`` (the radial
    fixed-point condition ``|z1| / a + |z2| / b = |z1| + |z2|``)."""
    a, b = (float(v) for v in spec.saddle)
    # |z1| (1/a - 1) = |z2| (1 - 1/b)
    c1, c2 = 1 / a - 1, 1 - 1 / b
    if c1 == 0 and c2 == 0:
        raise ModelMapError("identity saddle: every direction is radially fixed")
    if c1 * c2 < 0 or c1 == 0 or c2 == 0:
        return []
    t = c2 / c1                       # |z1| = t |z2|
    x, y = t / (1 + t), 1 / (1 + t)
    return [(x, y), (-x, y), (-x, -y), (x, -y)]


def fixed_points_on_ray(direction, interval, spec: ModelMapSpec = ModelMapSpec(),
                        tol: float = 1e-10) -> List[np.ndarray]:
    """Fixed points of ``F`` on the ray through ``direction`` with radius in
    ``interval``.

    Along the ray ``F(z) = z`` needs ``|S^{-1} d| = 1`` (radial) and
    ``1 / rho = (pi / 2)(pos(S^{-1} d) - pos(d) + 4 k)`` (angular); the
    angular condition is solved for each winding number ``k`` and every
    candidate is kept only if its residual is below ``tol``.
    """
    lo, hi = (float(v) for v in interval)
    if not 0 < lo < hi:
        raise ModelMapError("radius interval must be bounded away from zero")
    d = np.asarray(direction, dtype=float)
    d = d / np.abs(d).sum()
    a, b = (float(v) for v in spec.saddle)
    v = np.array([d[0] / a, d[1] / b])
    if abs(np.abs(v).sum() - 1) > 1e-12:
        return []
    delta = l1_position(tuple(v)) - l1_position(tuple(d))
    fspec = ModelMapSpec(spec.saddle, False, spec.ratio)
    out = []
    # 1/rho ranges over [1/hi, 1/lo]; winding numbers k with delta + 4k in range
    g_lo, g_hi = 2 / (math.pi * hi), 2 / (math.pi * lo)
    for k in range(math.ceil((g_lo - delta) / 4), math.floor((g_hi - delta) / 4) + 1):
        g = delta + 4 * k
        if g <= 0:
            continue
        rho = 2 / (math.pi * g)
        x = rho * d
        fx = np.array(model_map_step(tuple(x), fspec).z)
        if np.max(np.abs(fx - x)) <= tol:
            out.append(x)
    out.sort(key=lambda p: -np.abs(p).sum())
    return out


def all_fixed_points(interval, spec: ModelMapSpec = ModelMapSpec(),
                     tol: float = 1e-10) -> List[np.ndarray]:
    pts = []
    for d in fixed_point_rays(spec):
        pts.extend(fixed_points_on_ray(d, interval, spec, tol))
    pts.sort(key=lambda p: -np.abs(p).sum())
    return pts


# -- annulus itineraries ------------------------------------------------------

def realize_model_itinerary(target: AnnulusItinerary, L: int,
                            spec: ModelMapSpec = ModelMapSpec(), budget: int = 200000,
                            curves: int = 8, digits: Optional[int] = None):
    """Point whose orbit visits ``A_{n(0)}, ..., A_{n(L)}``.

    The twist ``1/|z|`` amplifies errors by roughly ``1/|z|`` per step, so
    deep itineraries outrun double precision.  With ``digits`` the search
    runs in ``mpmath`` at that many decimal digits and the witness comes
    back as a pair of decimal strings; otherwise it is a float array.
    """
    step = _step_fn(spec, digits)
    with _precision(digits):
        num = float if digits is None else mpmath.mpf
        witness, depth, _ = refine_along(target, L, step, radial_curves(target, curves, num=num),
                                         errors=(ModelMapError,), budget=budget, num=num)
        if witness is None:
            raise RefinementFailure(f"refinement emptied at depth {depth} of {L}", depth)
        if digits is None:
            return np.asarray(witness, dtype=float)
        return tuple(mpmath.nstr(v, digits, strip_zeros=False) for v in witness)


def verify_model_witness(u, target: AnnulusItinerary, L: int,
                         spec: ModelMapSpec = ModelMapSpec(), digits: Optional[int] = None) -> bool:
    """Re-iterate ``u`` at the same precision and check every index."""
    with _precision(digits):
        if digits is not None:
            u = np.array([mpmath.mpf(v) for v in u], dtype=object)
        return match_depth(u, target, _step_fn(spec, digits), L, (ModelMapError,)) > L


class _precision:
    def __init__(self, digits):
        self.digits = digits

    def __enter__(self):
        if self.digits is not None:
            self._ctx = mpmath.workdps(self.digits)
            self._ctx.__enter__()

    def __exit__(self, *exc):
        if self.digits is not None:
            self._ctx.__exit__(*exc)


def _step_fn(spec, digits):
    a, b = (float(v) for v in spec.saddle)
    if digits is None:
        fspec = ModelMapSpec(spec.saddle, False, spec.ratio)

        def step(u):
            return np.array(model_map_step((float(u[0]), float(u[1])), fspec).z)
        return step
    sa = [mpmath.mpf(str(v)) if not isinstance(v, Fraction) else
          mpmath.mpf(v.numerator) / v.denominator for v in spec.saddle]

    def mp_step(u):
        z = (mpmath.mpf(u[0]), mpmath.mpf(u[1]))
        rho = abs(z[0]) + abs(z[1])
        if rho == 0:
            raise ModelMapError("the model map is not defined at the origin")
        w = _rotate(z, 1 / rho, False)
        return np.array([sa[0] * w[0], sa[1] * w[1]], dtype=object)
    return mp_step


def model_itinerary(indices, spec: ModelMapSpec = ModelMapSpec()) -> AnnulusItinerary:
    """Itinerary on the model's annuli ``{r^(n+1) < |z| <= r^n}``."""
    return AnnulusItinerary(tuple(indices), spec.ratio, (0.0, 0.0), 1.0)
