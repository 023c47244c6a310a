"""Compiled float kernel for long transversal stretches of the inclusion.

Only single-valued supports are handled here.  The kernel hands control back
whenever two exits fall within a relative ``1e-9`` of each other, or when
an exit looks inconsistent.  The caller then resolves the tie with the
general machinery.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

CHUNK = 1 << 16
MERGE = 1e-9

DONE, TIE, FULL = 0, 1, 2


@njit(cache=True)
def _kernel(M, Tp, Tq, RT, CT, rb, cb, x, y, t, i, j, t_end, cap, ts, xs, ys, ip, jq,
            tied_p, tied_q):
    m, n = M.shape
    r = np.empty(m)
    c = np.empty(n)
    ts[0] = t
    xs[0, :] = x
    ys[0, :] = y
    k = 0
    while k < cap:
        for a in range(m):
            s = rb[a]
            for b in range(n):
                s += M[a, b] * y[b]
            r[a] = s
        for b in range(n):
            s = cb[b]
            for a in range(m):
                s += x[a] * M[a, b]
            c[b] = s
        best = np.inf
        second = np.inf
        side = -1
        idx = -1
        bad = False
        for l in range(m):
            if l == i:
                continue
            g0 = r[l] - r[i]
            gT = RT[j, l] - RT[j, i]
            if gT > 0.0:
                if g0 >= 0.0:
                    bad = True
                om = -g0 / (gT - g0)
                if om < best:
                    second = best
                    best = om
                    side = 0
                    idx = l
                elif om < second:
                    second = om
        for l in range(n):
            if l == j:
                continue
            g0 = c[j] - c[l]
            gT = CT[i, j] - CT[i, l]
            if gT > 0.0:
                if g0 >= 0.0:
                    bad = True
                om = -g0 / (gT - g0)
                if om < best:
                    second = best
                    best = om
                    side = 1
                    idx = l
                elif om < second:
                    second = om
        om_end = -np.expm1(-(t_end - t))
        if bad:
            for l in range(m):
                tied_p[l] = l == i
            for l in range(n):
                tied_q[l] = l == j
            return k, TIE, i, j
        finish = best >= om_end
        if finish:
            om = om_end
        else:
            om = best
        for a in range(m):
            x[a] += om * (Tp[i, a] - x[a])
        for b in range(n):
            y[b] += om * (Tq[j, b] - y[b])
        ip[k] = i
        jq[k] = j
        k += 1
        if finish:
            t = t_end
            ts[k] = t
            xs[k, :] = x
            ys[k, :] = y
            return k, DONE, i, j
        t += -np.log1p(-om)
        ts[k] = t
        xs[k, :] = x
        ys[k, :] = y
        if second - best <= MERGE * best:
            # simultaneous exits: report every exit inside the merge window
            for l in range(m):
                tied_p[l] = l == i
            for l in range(n):
                tied_q[l] = l == j
            lim = best * (1.0 + MERGE)
            for l in range(m):
                if l != i:
                    g0 = r[l] - r[i]
                    gT = RT[j, l] - RT[j, i]
                    if gT > 0.0 and -g0 / (gT - g0) <= lim:
                        tied_p[l] = True
            for l in range(n):
                if l != j:
                    g0 = c[j] - c[l]
                    gT = CT[i, j] - CT[i, l]
                    if gT > 0.0 and -g0 / (gT - g0) <= lim:
                        tied_q[l] = True
            return k, TIE, i, j
        if side == 0:
            i = idx
        else:
            j = idx
    return k, FULL, i, j


@dataclass
class KernelResult:
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    mask_p: np.ndarray
    mask_q: np.ndarray
    done: bool
    tied_p: tuple
    tied_q: tuple

    @property
    def count(self) -> int:
        return len(self.mask_p)


def _tables(spec):
    cache = spec.__dict__.get("_fast_tables")
    if cache is None:
        M = np.ascontiguousarray(spec.M.entries, dtype=float)
        Tp = np.ascontiguousarray(spec.dev_targets_p, dtype=float)
        Tq = np.ascontiguousarray(spec.dev_targets_q, dtype=float)
        rb = np.asarray(spec.row_base, dtype=float)
        cb = np.asarray(spec.col_base, dtype=float)
        RT = np.ascontiguousarray(rb[None, :] + Tq @ M.T)    # row payoffs at q-target j
        CT = np.ascontiguousarray(cb[None, :] + Tp @ M)      # column payoffs at p-target i
        cache = (M, Tp, Tq, RT, CT, rb, cb)
        spec.__dict__["_fast_tables"] = cache
    return cache


def run_transversal(spec, x, y, t, i, j, t_end, cap) -> KernelResult:
    """Integrate transversal segments from deviations ``(x, y)`` at time ``t``
    with supports ``i``/``j`` (0-based) until ``t_end``, a tie, or ``cap``
    segments."""
    M, Tp, Tq, RT, CT, rb, cb = _tables(spec)
    m, n = M.shape
    x = np.array(x, dtype=float)
    y = np.array(y, dtype=float)
    t_parts, x_parts, y_parts, ip_parts, jq_parts = [], [], [], [], []
    tied_p = np.zeros(m, dtype=np.bool_)
    tied_q = np.zeros(n, dtype=np.bool_)
    remaining = cap
    status = FULL
    while remaining > 0:
        size = min(CHUNK, remaining)
        ts = np.empty(size + 1)
        xs = np.empty((size + 1, m))
        ys = np.empty((size + 1, n))
        ip = np.empty(size, dtype=np.int64)
        jq = np.empty(size, dtype=np.int64)
        k, status, i, j = _kernel(M, Tp, Tq, RT, CT, rb, cb, x, y, t, i, j, float(t_end),
                                  size, ts, xs, ys, ip, jq, tied_p, tied_q)
        start = 0 if not t_parts else 1
        t_parts.append(ts[start:k + 1])
        x_parts.append(xs[start:k + 1])
        y_parts.append(ys[start:k + 1])
        ip_parts.append(ip[:k])
        jq_parts.append(jq[:k])
        t = float(ts[k])
        remaining -= k
        if status != FULL:
            break
    if status == FULL:
        from .flow import FlowError
        raise FlowError(f"segment cap {cap} exceeded")
    ip_all = np.concatenate(ip_parts)
    jq_all = np.concatenate(jq_parts)
    return KernelResult(
        np.concatenate(t_parts), np.concatenate(x_parts), np.concatenate(y_parts),
        np.left_shift(1, ip_all), np.left_shift(1, jq_all), status == DONE,
        tuple(int(v) for v in np.flatnonzero(tied_p)),
        tuple(int(v) for v in np.flatnonzero(tied_q)))


# -- level-set translation flow ----------------------------------------------

@njit(cache=True)
def _level_kernel(M, Tp, Tq, DR, DC, rb, cb, x, y, i, j, nx, ny, c, orient, G, Goff, R, cap,
                  s_max, ip, jq):
    """Translate ``(x, y)`` through transversal cells until the oriented
    plane ``nx.x + ny.y = c`` is crossed inside ``|G z|_1 <= R``.

    Returns ``(k, status, i, j, s)``; on return ``x, y`` hold the end point.
    """
    m, n = M.shape
    r = np.empty(m)
    cc = np.empty(n)
    s = 0.0
    k = 0
    while k < cap:
        for a in range(m):
            v = rb[a]
            for b in range(n):
                v += M[a, b] * y[b]
            r[a] = v
        for b in range(n):
            v = cb[b]
            for a in range(m):
                v += x[a] * M[a, b]
            cc[b] = v
        best = np.inf
        second = np.inf
        side = -1
        idx = -1
        for l in range(m):
            if l == i:
                continue
            rate = DR[j, l] - DR[j, i]
            if rate > 0.0:
                g0 = r[l] - r[i]
                if g0 > 0.0:
                    return k, TIE, i, j, s
                e = -g0 / rate
                if e < best:
                    second = best
                    best = e
                    side = 0
                    idx = l
                elif e < second:
                    second = e
        for l in range(n):
            if l == j:
                continue
            rate = DC[i, j] - DC[i, l]
            if rate > 0.0:
                g0 = cc[j] - cc[l]
                if g0 > 0.0:
                    return k, TIE, i, j, s
                e = -g0 / rate
                if e < best:
                    second = best
                    best = e
                    side = 1
                    idx = l
                elif e < second:
                    second = e
        if best == np.inf:
            return k, FULL, i, j, s
        # section crossing inside this segment
        slope = 0.0
        val = -c
        for a in range(m):
            slope += nx[a] * Tp[i, a]
            val += nx[a] * x[a]
        for b in range(n):
            slope += ny[b] * Tq[j, b]
            val += ny[b] * y[b]
        if k < ip.shape[0]:
            ip[k] = i
            jq[k] = j
        if slope * orient > 0.0:
            h = -val / slope
            floor = 1e-12 * max(1.0, best)
            ok = h > floor if k == 0 else h >= -floor
            if ok and h <= best + floor:
                h = min(max(h, 0.0), best)
                norm = 0.0
                for row in range(G.shape[0]):
                    g = Goff[row]
                    for a in range(m):
                        g += G[row, a] * (x[a] + h * Tp[i, a])
                    for b in range(n):
                        g += G[row, m + b] * (y[b] + h * Tq[j, b])
                    norm += abs(g)
                if norm <= R:
                    for a in range(m):
                        x[a] += h * Tp[i, a]
                    for b in range(n):
                        y[b] += h * Tq[j, b]
                    return k + 1, DONE, i, j, s + h
        for a in range(m):
            x[a] += best * Tp[i, a]
        for b in range(n):
            y[b] += best * Tq[j, b]
        s += best
        k += 1
        if s > s_max:
            return k, FULL, i, j, s
        if second - best <= MERGE * best:
            return k, TIE, i, j, s
        if side == 0:
            i = idx
        else:
            j = idx
    return k, FULL, i, j, s


@dataclass
class LevelResult:
    x: np.ndarray
    y: np.ndarray
    s: float
    done: bool
    cells: list          # 0-based (i, j) per segment, consecutive repeats removed
    count: int
    status: int = DONE
    i: int = -1          # current cell when the kernel stopped
    j: int = -1


def run_level(spec, x, y, i, j, normal, offset, orientation=1, G=None, R=np.inf,
              cap=10 ** 7, s_max=np.inf, record: bool = True) -> LevelResult:
    """Level-set flow on transversal cells until an oriented crossing of
    ``normal . (p, q) = offset`` (optionally restricted to ``|G (p, q)|_1 <= R``),
    a tie, ``cap`` segments or flow time ``s_max``.  ``x, y`` are deviations
    from the equilibrium.  With ``record=False`` the cell list stays empty."""
    M, Tp, Tq, RT, CT, rb, cb = _tables(spec)
    m, n = M.shape
    DR = np.ascontiguousarray(Tq @ M.T)
    DC = np.ascontiguousarray(Tp @ M)
    eq = np.concatenate([np.asarray(spec.equilibrium.p_bar, dtype=float),
                         np.asarray(spec.equilibrium.q_bar, dtype=float)])
    normal = np.asarray(normal, dtype=float)
    c = float(offset) - float(normal @ eq)
    if G is None:
        G = np.zeros((0, m + n))
        Goff = np.zeros(0)
    else:
        G = np.ascontiguousarray(G, dtype=float)
        Goff = G @ eq
    x = np.array(x, dtype=float)
    y = np.array(y, dtype=float)
    size = cap if record else 0
    ip = np.empty(size, dtype=np.int64)
    jq = np.empty(size, dtype=np.int64)
    k, status, i, j, s = _level_kernel(M, Tp, Tq, DR, DC, rb, cb, x, y, int(i), int(j),
                                       np.ascontiguousarray(normal[:m]),
                                       np.ascontiguousarray(normal[m:]), c,
                                       float(orientation), G, Goff, float(R), cap,
                                       float(s_max), ip, jq)
    cells = []
    for a, b in zip(ip[:min(k, size)].tolist(), jq[:min(k, size)].tolist()):
        if not cells or cells[-1] != (a, b):
            cells.append((a, b))
    return LevelResult(x, y, s, status == DONE, cells, k, status, i, j)
