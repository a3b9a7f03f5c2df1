"""Jitted disjointness test and greedy scans over candidate arrays.

Closed balls intersect when some probe lies in both, unless the
center-separation fast path already separates them: the second center lies
outside the first ball inflated to ``2 eps`` over the shorter duration.

The greedy scan keeps, for every probe, the accepted balls that contain it.
A candidate lying in an accepted ball is then rejected without scanning the
probe set, and otherwise a single scan of its own ball finds every accepted
ball sharing a probe with it.
"""

from __future__ import annotations

import numba
import numpy as np

from .reparam import grid_shape, kernels

DISJOINT_FAST = 0
DISJOINT_PROBED = 1
INTERSECT = 2

MAX_OWNERS = 8


def make_greedy_kernels(within, contains_ws):
    @numba.njit
    def workspace(t_max, dt, eta):
        _, nrow = grid_shape(t_max, dt, t_max * (1.0 + eta))
        return np.zeros(nrow + 2, dtype=np.bool_), np.zeros(nrow + 2, dtype=np.bool_)

    @numba.njit
    def inside(x, y, t, eps, dt, eta, ws0, ws1):
        return contains_ws(x, y, t, dt, t * (1.0 + eta), eps, ws0, ws1)

    @numba.njit
    def fast_separated(xa, ta, xb, tb, eps, dt, eta, ws0, ws1):
        e2 = 2.0 * eps + 1e-12
        tmin = min(ta, tb)
        if not within(xa, 0.0, xb, 0.0, e2):
            return True
        return not inside(xa, xb, tmin, e2, dt, eta, ws0, ws1)

    @numba.njit
    def members(x, t, eps, dt, eta, probes, ws0, ws1):
        """Sorted indices of probes inside the closed ball (x, t, eps)."""
        e1 = eps + 1e-12
        out = np.empty(probes.shape[0], dtype=np.int64)
        n = 0
        for p in range(probes.shape[0]):
            if not within(x, 0.0, probes[p], 0.0, e1):
                continue
            if inside(x, probes[p], t, e1, dt, eta, ws0, ws1):
                out[n] = p
                n += 1
        return out[:n].copy()

    @numba.njit
    def disjoint(xa, ta, xb, tb, eps, dt, eta, probes):
        ws0, ws1 = workspace(max(ta, tb), dt, eta)
        if fast_separated(xa, ta, xb, tb, eps, dt, eta, ws0, ws1):
            return DISJOINT_FAST
        e1 = eps + 1e-12
        if inside(xa, xb, ta, e1, dt, eta, ws0, ws1):
            return INTERSECT
        if inside(xb, xa, tb, e1, dt, eta, ws0, ws1):
            return INTERSECT
        for p in range(probes.shape[0]):
            q = probes[p]
            if not within(xa, 0.0, q, 0.0, e1) or not within(xb, 0.0, q, 0.0, e1):
                continue
            if inside(xa, q, ta, e1, dt, eta, ws0, ws1) and inside(xb, q, tb, e1, dt, eta, ws0, ws1):
                return INTERSECT
        return DISJOINT_PROBED

    @numba.njit
    def greedy(cands, ts, order, eps, dt, eta, probes, weights, stop_mass):
        """Accept candidates in ``order`` whose balls are disjoint from every
        accepted ball, stopping once the accepted weight exceeds ``stop_mass``.
        ``probes[:len(cands)]`` must be the candidates.

        Returns (accepted indices, blocker per candidate or -1, owner overflow)."""
        ws0, ws1 = workspace(ts.max(), dt, eta)
        n = order.shape[0]
        acc = np.empty(n, dtype=np.int64)
        blocker = np.full(cands.shape[0], -1, dtype=np.int64)
        owners = np.full((probes.shape[0], MAX_OWNERS), -1, dtype=np.int64)
        nown = np.zeros(probes.shape[0], dtype=np.int64)
        overflow = False
        mass = 0.0
        na = 0
        for k in range(n):
            c = order[k]
            hit = -1
            for m in range(nown[c]):
                a = owners[c, m]
                if not fast_separated(cands[a], ts[a], cands[c], ts[c], eps, dt, eta, ws0, ws1):
                    hit = a
                    break
            mine = np.empty(0, dtype=np.int64)
            if hit < 0:
                mine = members(cands[c], ts[c], eps, dt, eta, probes, ws0, ws1)
                for p in mine:
                    for m in range(nown[p]):
                        a = owners[p, m]
                        if not fast_separated(cands[a], ts[a], cands[c], ts[c], eps, dt, eta, ws0, ws1):
                            hit = a
                            break
                    if hit >= 0:
                        break
            if hit >= 0:
                blocker[c] = hit
                continue
            for p in mine:
                if nown[p] < MAX_OWNERS:
                    owners[p, nown[p]] = c
                    nown[p] += 1
                else:
                    overflow = True
            acc[na] = c
            na += 1
            mass += weights[c]
            if mass > stop_mass:
                break
        return acc[:na].copy(), blocker, overflow

    @numba.njit
    def ball_mass(x, t, eps, dt, eta, atoms, weights):
        ws0, ws1 = workspace(t, dt, eta)
        e1 = eps + 1e-12
        tot = 0.0
        for p in range(atoms.shape[0]):
            if not within(x, 0.0, atoms[p], 0.0, e1):
                continue
            if inside(x, atoms[p], t, e1, dt, eta, ws0, ws1):
                tot += weights[p]
        return tot

    @numba.njit
    def members_of(x, t, eps, dt, eta, probes):
        ws0, ws1 = workspace(t, dt, eta)
        return members(x, t, eps, dt, eta, probes, ws0, ws1)

    @numba.njit
    def near(z, r, pts):
        """Indices of points within metric distance r of z (time 0)."""
        out = np.empty(pts.shape[0], dtype=np.int64)
        n = 0
        for p in range(pts.shape[0]):
            if within(z, 0.0, pts[p], 0.0, r):
                out[n] = p
                n += 1
        return out[:n].copy()

    @numba.njit
    def net(pts, sep):
        """Greedy subset whose points are pairwise farther apart than sep."""
        keep = np.empty(pts.shape[0], dtype=np.int64)
        n = 0
        for p in range(pts.shape[0]):
            ok = True
            for k in range(n):
                if within(pts[keep[k]], 0.0, pts[p], 0.0, sep):
                    ok = False
                    break
            if ok:
                keep[n] = p
                n += 1
        return keep[:n].copy()

    return disjoint, greedy, members_of, ball_mass, near, net


def greedy_kernels(system):
    ks = getattr(system, "_greedy_kernels", None)
    if ks is None:
        ks = make_greedy_kernels(system.within, kernels(system)[3])
        system._greedy_kernels = ks
    return ks


def as_array(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    return np.ascontiguousarray(arr)
