"""Annulus itineraries and the nested refinement search that realizes them.

Shared by the true transversal section and the closed-form model map.  An
itinerary prescribes which annulus ``A_n = {r^(n+1) R < |u|_1 <= r^n R}``
around a centre the ``i``-th iterate must visit.
"""
from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class AnnulusItinerary:
    """Annulus indices ``n(i)`` with ratio ``r`` and outer radius ``R``."""
    indices: tuple
    ratio: float
    center: tuple = (0.0, 0.0)
    outer: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(n) for n in self.indices))
        if not 0 < self.ratio < 1:
            raise ValueError("annulus ratio must lie in (0, 1)")
        if any(n < 0 for n in self.indices):
            raise ValueError("annulus indices must be non-negative")
        if any(abs(a - b) > 1 for a, b in zip(self.indices, self.indices[1:])):
            raise ValueError("consecutive annulus indices must differ by at most one")

    def index_of(self, u) -> int:
        """Annulus index of ``u``, or -1 outside the outer radius (or at the centre)."""
        d = float(np.abs(np.asarray(u, dtype=float) - np.asarray(self.center, dtype=float)).sum())
        if d == 0 or d > self.outer:
            return -1
        return int(np.floor(np.log(d / self.outer) / np.log(self.ratio)))

    def coordinate(self, u) -> float:
        """Continuous annulus coordinate; its floor is the index."""
        d = float(np.abs(np.asarray(u, dtype=float) - np.asarray(self.center, dtype=float)).sum())
        if d == 0:
            return np.inf
        return float(np.log(d / self.outer) / np.log(self.ratio))

    def to_json(self) -> dict:
        return {"indices": list(self.indices), "ratio": self.ratio,
                "center": [float(c) for c in self.center], "outer": self.outer}


def constant_itinerary(n0: int, L: int, ratio: float, **kw) -> AnnulusItinerary:
    return AnnulusItinerary((n0,) * (L + 1), ratio, **kw)


def alternating_itinerary(n0: int, L: int, ratio: float, **kw) -> AnnulusItinerary:
    return AnnulusItinerary(tuple(n0 + (i % 2) for i in range(L + 1)), ratio, **kw)


def monotone_itinerary(n0: int, L: int, ratio: float, step: int = 1, **kw) -> AnnulusItinerary:
    """``n0, n0 + step, ...`` (``step = -1`` walks outward)."""
    return AnnulusItinerary(tuple(n0 + step * i for i in range(L + 1)), ratio, **kw)


class RefinementFailure(RuntimeError):
    """Nested refinement ran dry before the requested depth."""

    def __init__(self, msg, depth):
        super().__init__(msg)
        self.depth = depth


def match_depth(u, target: AnnulusItinerary, step: Callable, L: int, errors=(ArithmeticError,)):
    """Number of leading indices ``n(0), n(1), ...`` realized by the orbit of
    ``u`` (capped at ``L + 1``).  A step raising one of ``errors`` ends the
    orbit."""
    idx = target.indices
    cur = u
    for d in range(L + 1):
        if target.index_of(cur) != idx[d]:
            return d
        if d == L:
            return L + 1
        try:
            cur = step(cur)
        except errors:
            return d + 1
    return L + 1


def refine(target: AnnulusItinerary, L: int, step: Callable, budget: int = 4000,
           grid: int = 24, errors=(ArithmeticError,)):
    """Best-first nested refinement over square boxes.

    The starting annulus is covered by a ``grid x grid`` array of boxes.
    Each box is scored by how many leading indices its centre realizes;
    the deepest (then widest) box is split into four, and the parent stays
    queued at half size.  Returns ``(witness or None, deepest depth, evals)``.
    """
    if len(target.indices) < L + 1:
        raise ValueError("itinerary shorter than the requested depth")
    hi = target.outer * target.ratio ** target.indices[0]
    c = np.asarray(target.center, dtype=float)
    h = 2 * hi / grid
    heap = []
    tick = itertools.count()
    evals = 0
    best = 0
    for a, b in itertools.product(range(grid), range(grid)):
        u = c + np.array([-hi + (a + 0.5) * h, -hi + (b + 0.5) * h])
        d = match_depth(u, target, step, L, errors)
        evals += 1
        best = max(best, d)
        if d > L:
            return u, d, evals
        if d >= 1:
            heapq.heappush(heap, (-d, -h, next(tick), u))
    while heap and evals < budget:
        negd, negsize, _, u = heapq.heappop(heap)
        half = -negsize / 2
        for dx, dy in itertools.product((-0.5, 0.5), repeat=2):
            v = u + half * np.array([dx, dy])
            d = match_depth(v, target, step, L, errors)
            evals += 1
            best = max(best, d)
            if d > L:
                return v, d, evals
            if d >= 1:
                heapq.heappush(heap, (-d, -half, next(tick), v))
        heapq.heappush(heap, (negd, -half, next(tick), u))
    return None, best, evals


def _runs(flags):
    """Index ranges ``[i, j]`` of consecutive True entries."""
    out, start = [], None
    for k, f in enumerate(flags):
        if f and start is None:
            start = k
        if not f and start is not None:
            out.append((start, k - 1))
            start = None
    if start is not None:
        out.append((start, len(flags) - 1))
    return out


def _probe(u, target, step, d, errors):
    """``(ok, a)``: whether ``u`` realizes ``n(0..d)`` and the continuous
    annulus coordinate of its next image (None if the step fails)."""
    idx = target.indices
    cur = u
    for k in range(d + 1):
        if target.index_of(cur) != idx[k]:
            return False, None
        try:
            cur = step(cur)
        except errors:
            return True, None
    return True, target.coordinate(cur)


def refine_along(target: AnnulusItinerary, L: int, step: Callable, curves,
                 samples: int = 48, beam: int = 32, errors=(ArithmeticError,),
                 budget: int = 200000, bisect: int = 60, num=float):
    """Nested refinement on parameter intervals of seed curves.

    Each curve ``c(t), t in [0, 1]`` crosses the starting annulus.  At depth
    ``d`` the search keeps up to ``beam`` intervals whose points realize
    ``n(0), ..., n(d)``.  Every kept interval is resampled; runs of samples
    whose next image lies in ``A_{n(d+1)}`` become new intervals, and
    neighbouring samples whose images fall on opposite sides of that
    annulus are bisected (the image moves continuously along the curve)
    until a point inside is found.  ``num`` converts curve parameters
    (pass ``mpmath.mpf`` to bisect below double resolution).  Returns
    ``(witness or None, deepest depth, evals)``.
    """
    if len(target.indices) < L + 1:
        raise ValueError("itinerary shorter than the requested depth")
    evals = 0
    frontier = []
    for c in curves:
        ts = [num(k + 0.5) / (4 * samples) for k in range(4 * samples)]
        ok = [target.index_of(c(t)) == target.indices[0] for t in ts]
        h = ts[1] - ts[0]
        frontier += [(c, ts[i] - h / 2, ts[j] + h / 2, j - i + 1) for i, j in _runs(ok)]
    best = 1 if frontier else 0
    for d in range(0, L):
        n_next = target.indices[d + 1]
        nxt = []
        for c, a, b, _ in frontier:
            h = (b - a) / samples
            ts = [a + (k + 0.5) * h for k in range(samples)]
            probes = []
            for t in ts:
                if evals >= budget:
                    break
                probes.append(_probe(c(t), target, step, d, errors))
                evals += 1
            hit = [ok and x is not None and n_next <= x < n_next + 1 for ok, x in probes]
            for i, j in _runs(hit):
                nxt.append((c, ts[i] - h / 2, ts[j] + h / 2, j - i + 1))
            # bracketed crossings of the target annulus between adjacent samples
            for k in range(len(probes) - 1):
                (ok0, x0), (ok1, x1) = probes[k], probes[k + 1]
                if not (ok0 and ok1) or x0 is None or x1 is None or hit[k] or hit[k + 1]:
                    continue
                if (x0 < n_next) == (x1 < n_next) and (x0 < n_next + 1) == (x1 < n_next + 1):
                    continue
                lo, hi, xlo = ts[k], ts[k + 1], x0
                for _ in range(bisect):
                    if evals >= budget:
                        break
                    mid = 0.5 * (lo + hi)
                    if not lo < mid < hi:
                        break
                    okm, xm = _probe(c(mid), target, step, d, errors)
                    evals += 1
                    if not okm or xm is None:
                        break
                    if n_next <= xm < n_next + 1:
                        w = hi - lo
                        nxt.append((c, mid - w / 4, mid + w / 4, 0))
                        break
                    # keep the half whose ends straddle the band
                    below_lo, below_m = xlo < n_next, xm < n_next
                    if below_lo != below_m:
                        hi = mid
                    else:
                        lo, xlo = mid, xm
        if not nxt:
            return None, best, evals
        best = d + 2
        # widest runs first: they leave most room for the next constraint
        nxt.sort(key=lambda r: -r[3])
        frontier = nxt[:beam]
        if evals >= budget:
            return None, best, evals
    for c, a, b, _ in frontier:
        for t in (0.5 * (a + b), a + 0.25 * (b - a), a + 0.75 * (b - a)):
            u = c(t)
            if match_depth(u, target, step, L, errors) > L:
                return u, L + 1, evals
    return None, L, evals


def radial_curves(target: AnnulusItinerary, count: int = 8, offset: float = 0.1, num=float):
    """Radial segments across the starting annulus at ``count`` angles."""
    n0 = target.indices[0]
    lo = num(target.outer) * num(target.ratio) ** (n0 + 1)
    hi = num(target.outer) * num(target.ratio) ** n0
    c0 = np.array([num(c) for c in target.center], dtype=float if num is float else object)
    out = []
    for k in range(count):
        th = 2 * np.pi * (k + offset) / count
        d = np.array([num(np.cos(th)), num(np.sin(th))], dtype=c0.dtype)
        d = d / (abs(d[0]) + abs(d[1]))

        def curve(t, d=d):
            return c0 + (lo + t * (hi - lo)) * d
        out.append(curve)
    return out
