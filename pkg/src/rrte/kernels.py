"""Hot loops: bilinear gathers, fast marching, batched steepest-descent tracing.

Each public function dispatches on :data:`rrte._accel.USE_NUMBA`.  The
``*_numba`` variants are ``@njit`` loops; the ``*_numpy`` variants are
vectorized numpy, except fast marching whose fallback is the same heap
algorithm in plain Python.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

from ._accel import USE_NUMBA, njit

FAR, TRIAL, KNOWN = 0, 1, 2

# trace status codes
TRACE_OK, TRACE_STALL, TRACE_MAXSTEPS = 0, 1, 2


# ---------------------------------------------------------------------------
# bilinear interpolation
# ---------------------------------------------------------------------------


def _cell(values_shape, x0, y0, h, hy, xs, ys):
    ny, nx = values_shape
    fx = (xs - x0) / h
    fy = (ys - y0) / hy
    i = np.clip(np.floor(fx).astype(np.int64), 0, nx - 2)
    k = np.clip(np.floor(fy).astype(np.int64), 0, ny - 2)
    tx = np.clip(fx - i, 0.0, 1.0)
    ty = np.clip(fy - k, 0.0, 1.0)
    return k, i, tx, ty


def bilinear_numpy(values, x0, y0, h, hy, xs, ys):
    k, i, tx, ty = _cell(values.shape, x0, y0, h, hy, np.asarray(xs, float), np.asarray(ys, float))
    return (
        (1 - tx) * (1 - ty) * values[k, i]
        + tx * (1 - ty) * values[k, i + 1]
        + (1 - tx) * ty * values[k + 1, i]
        + tx * ty * values[k + 1, i + 1]
    )


@njit(cache=True)
def _bilinear_point(values, x0, y0, h, hy, x, y):
    ny, nx = values.shape
    fx = (x - x0) / h
    fy = (y - y0) / hy
    i = int(math.floor(fx))
    k = int(math.floor(fy))
    if i < 0:
        i = 0
    elif i > nx - 2:
        i = nx - 2
    if k < 0:
        k = 0
    elif k > ny - 2:
        k = ny - 2
    tx = min(max(fx - i, 0.0), 1.0)
    ty = min(max(fy - k, 0.0), 1.0)
    return (
        (1 - tx) * (1 - ty) * values[k, i]
        + tx * (1 - ty) * values[k, i + 1]
        + (1 - tx) * ty * values[k + 1, i]
        + tx * ty * values[k + 1, i + 1]
    )


@njit(cache=True)
def bilinear_numba(values, x0, y0, h, hy, xs, ys):
    out = np.empty(xs.shape[0])
    for n in range(xs.shape[0]):
        out[n] = _bilinear_point(values, x0, y0, h, hy, xs[n], ys[n])
    return out


def bilinear(values, x0, y0, h, hy, xs, ys):
    values = np.ascontiguousarray(values, dtype=np.float64)
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    ys = np.ascontiguousarray(ys, dtype=np.float64)
    if USE_NUMBA:
        return bilinear_numba(values, float(x0), float(y0), float(h), float(hy), xs, ys)
    return bilinear_numpy(values, x0, y0, h, hy, xs, ys)


def bilinear_stencil(shape, x0, y0, h, hy, xs, ys):
    """Flat node indices ``(n, 4)`` and weights ``(n, 4)`` of the bilinear interpolant."""
    ny, nx = shape
    k, i, tx, ty = _cell(shape, x0, y0, h, hy, np.asarray(xs, float), np.asarray(ys, float))
    base = k * nx + i
    idx = np.stack([base, base + 1, base + nx, base + nx + 1], axis=1)
    w = np.stack([(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty], axis=1)
    return idx, w


# ---------------------------------------------------------------------------
# fast marching (first order, 4-neighbour upwind, additive factorization)
#
# The unknown is t = tau - base, where base = n0 |x - s| is the travel time
# in the constant metric n0 frozen at the source, and (bx, by) = grad base.
# With base = 0 this is the classic first-order scheme.
# ---------------------------------------------------------------------------


def _fmm_update(t1, base, bx, by, state, slow, h, hy, k, i):
    ny, nx = t1.shape
    # per axis, the known neighbour with the smallest total time
    ia = -1
    if i > 0 and state[k, i - 1] == KNOWN:
        ia = i - 1
    if i < nx - 1 and state[k, i + 1] == KNOWN:
        if ia < 0 or t1[k, i + 1] + base[k, i + 1] < t1[k, ia] + base[k, ia]:
            ia = i + 1
    kb = -1
    if k > 0 and state[k - 1, i] == KNOWN:
        kb = k - 1
    if k < ny - 1 and state[k + 1, i] == KNOWN:
        if kb < 0 or t1[k + 1, i] + base[k + 1, i] < t1[kb, i] + base[kb, i]:
            kb = k + 1
    n = slow[k, i]
    px = bx[k, i]
    py = by[k, i]
    best = math.inf
    cx = 0.0
    dx = 0.0
    cy = 0.0
    dy = 0.0
    if ia >= 0:
        sx = 1.0 if ia < i else -1.0
        cx = sx / h
        dx = px - sx * t1[k, ia] / h
        disc = n * n - py * py
        if disc >= 0.0:
            t = (sx * math.sqrt(disc) - dx) / cx
            best = t
        else:
            best = t1[k, ia] + base[k, ia] + h * n - base[k, i]
    if kb >= 0:
        sy = 1.0 if kb < k else -1.0
        cy = sy / hy
        dy = py - sy * t1[kb, i] / hy
        disc = n * n - px * px
        if disc >= 0.0:
            t = (sy * math.sqrt(disc) - dy) / cy
        else:
            t = t1[kb, i] + base[kb, i] + hy * n - base[k, i]
        if t < best:
            best = t
    if ia >= 0 and kb >= 0:
        qa = cx * cx + cy * cy
        qb = cx * dx + cy * dy
        qc = dx * dx + dy * dy - n * n
        disc = qb * qb - qa * qc
        if disc >= 0.0:
            t = (-qb + math.sqrt(disc)) / qa
            # both one-sided differences must point downstream
            if (cx * t + dx) * cx >= 0.0 and (cy * t + dy) * cy >= 0.0 and t < best:
                best = t
    return best


_fmm_update_numba = njit(cache=True)(_fmm_update)


def fmm_python(slow, h, hy, t0, known0, base, bx, by):
    """Plain-Python fast marching on ``t = tau - base``; ``known0`` nodes are frozen at ``t0``."""
    ny, nx = slow.shape
    t1 = np.where(known0, t0, np.inf).astype(float)
    state = np.where(known0, KNOWN, FAR).astype(np.int8)
    heap = []

    def relax(k0, i0):
        for dk, di in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            k, i = k0 + dk, i0 + di
            if 0 <= k < ny and 0 <= i < nx and state[k, i] != KNOWN:
                t = _fmm_update(t1, base, bx, by, state, slow, h, hy, k, i)
                if t < t1[k, i]:
                    t1[k, i] = t
                    state[k, i] = TRIAL
                    heapq.heappush(heap, (t + base[k, i], k, i))

    for k0, i0 in zip(*np.nonzero(known0)):
        relax(k0, i0)
    while heap:
        tt, k0, i0 = heapq.heappop(heap)
        if state[k0, i0] == KNOWN or tt > t1[k0, i0] + base[k0, i0]:
            continue
        state[k0, i0] = KNOWN
        relax(k0, i0)
    return t1 + base


@njit(cache=True)
def fmm_numba(slow, h, hy, t0, known0, base, bx, by):
    ny, nx = slow.shape
    t1 = np.empty((ny, nx))
    state = np.zeros((ny, nx), dtype=np.int8)
    for k in range(ny):
        for i in range(nx):
            if known0[k, i]:
                t1[k, i] = t0[k, i]
                state[k, i] = KNOWN
            else:
                t1[k, i] = np.inf
    heap = [(0.0, 0, 0)]
    heap.pop()
    dks = (1, -1, 0, 0)
    dis = (0, 0, 1, -1)
    first = True
    while first or len(heap) > 0:
        if first:
            first = False
            for k0 in range(ny):
                for i0 in range(nx):
                    if not known0[k0, i0]:
                        continue
                    for nb in range(4):
                        k = k0 + dks[nb]
                        i = i0 + dis[nb]
                        if 0 <= k < ny and 0 <= i < nx and state[k, i] != KNOWN:
                            t = _fmm_update_numba(t1, base, bx, by, state, slow, h, hy, k, i)
                            if t < t1[k, i]:
                                t1[k, i] = t
                                state[k, i] = TRIAL
                                heapq.heappush(heap, (t + base[k, i], k, i))
            continue
        tt, k0, i0 = heapq.heappop(heap)
        if state[k0, i0] == KNOWN or tt > t1[k0, i0] + base[k0, i0]:
            continue
        state[k0, i0] = KNOWN
        for nb in range(4):
            k = k0 + dks[nb]
            i = i0 + dis[nb]
            if 0 <= k < ny and 0 <= i < nx and state[k, i] != KNOWN:
                t = _fmm_update_numba(t1, base, bx, by, state, slow, h, hy, k, i)
                if t < t1[k, i]:
                    t1[k, i] = t
                    state[k, i] = TRIAL
                    heapq.heappush(heap, (t + base[k, i], k, i))
    return t1 + base


def fast_march(slow, h, hy, tau0, known0, base=None, bx=None, by=None):
    """Travel times given frozen initial values ``tau0`` on ``known0``.

    ``base`` with gradient ``(bx, by)`` is an optional analytic factor; the
    scheme then marches the correction ``tau - base``.
    """
    slow = np.ascontiguousarray(slow, dtype=np.float64)
    if base is None:
        base = np.zeros_like(slow)
        bx = np.zeros_like(slow)
        by = np.zeros_like(slow)
    base = np.ascontiguousarray(base, dtype=np.float64)
    bx = np.ascontiguousarray(bx, dtype=np.float64)
    by = np.ascontiguousarray(by, dtype=np.float64)
    known0 = np.ascontiguousarray(known0, dtype=np.bool_)
    t0 = np.ascontiguousarray(np.where(known0, tau0 - base, 0.0), dtype=np.float64)
    if USE_NUMBA:
        return fmm_numba(slow, float(h), float(hy), t0, known0, base, bx, by)
    return fmm_python(slow, h, hy, t0, known0, base, bx, by)


# ---------------------------------------------------------------------------
# steepest-descent tracing through grad(tau)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _descent_dir(gx, gy, x0, y0, h, hy, x, y):
    vx = _bilinear_point(gx, x0, y0, h, hy, x, y)
    vy = _bilinear_point(gy, x0, y0, h, hy, x, y)
    return vx, vy, math.sqrt(vx * vx + vy * vy)


@njit(cache=True)
def trace_numba(gx, gy, x0, y0, h, hy, x1, y1, sx, sy, tx, ty, step, stop_r, max_steps, stall_tol):
    n = tx.shape[0]
    px = np.empty((n, max_steps + 1))
    py = np.empty((n, max_steps + 1))
    count = np.zeros(n, dtype=np.int64)
    status = np.zeros(n, dtype=np.int64)
    for p in range(n):
        x = tx[p]
        y = ty[p]
        px[p, 0] = x
        py[p, 0] = y
        c = 1
        st = TRACE_MAXSTEPS
        for _ in range(max_steps):
            dist = math.sqrt((x - sx) ** 2 + (y - sy) ** 2)
            if dist <= stop_r:
                st = TRACE_OK
                break
            vx, vy, g = _descent_dir(gx, gy, x0, y0, h, hy, x, y)
            if g < stall_tol:
                st = TRACE_STALL
                break
            s = min(step, dist)
            xm = x - 0.5 * s * vx / g
            ym = y - 0.5 * s * vy / g
            vx, vy, g = _descent_dir(gx, gy, x0, y0, h, hy, xm, ym)
            if g < stall_tol:
                st = TRACE_STALL
                break
            x = min(max(x - s * vx / g, x0), x1)
            y = min(max(y - s * vy / g, y0), y1)
            px[p, c] = x
            py[p, c] = y
            c += 1
        if st == TRACE_MAXSTEPS and math.sqrt((x - sx) ** 2 + (y - sy) ** 2) <= stop_r:
            st = TRACE_OK
        count[p] = c
        status[p] = st
    return px, py, count, status


def trace_numpy(gx, gy, x0, y0, h, hy, x1, y1, sx, sy, tx, ty, step, stop_r, max_steps, stall_tol):
    """Lockstep vectorized version of :func:`trace_numba` over all targets."""
    n = tx.shape[0]
    px = np.empty((n, max_steps + 1))
    py = np.empty((n, max_steps + 1))
    count = np.ones(n, dtype=np.int64)
    status = np.full(n, TRACE_MAXSTEPS, dtype=np.int64)
    x = np.array(tx, dtype=float)
    y = np.array(ty, dtype=float)
    px[:, 0] = x
    py[:, 0] = y
    active = np.ones(n, dtype=bool)
    for _ in range(max_steps):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        xa, ya = x[idx], y[idx]
        dist = np.hypot(xa - sx, ya - sy)
        done = dist <= stop_r
        status[idx[done]] = TRACE_OK
        active[idx[done]] = False
        keep = ~done
        idx, xa, ya, dist = idx[keep], xa[keep], ya[keep], dist[keep]
        vx = bilinear_numpy(gx, x0, y0, h, hy, xa, ya)
        vy = bilinear_numpy(gy, x0, y0, h, hy, xa, ya)
        g = np.hypot(vx, vy)
        stall = g < stall_tol
        s = np.minimum(step, dist)
        gs = np.where(stall, 1.0, g)
        xm = xa - 0.5 * s * vx / gs
        ym = ya - 0.5 * s * vy / gs
        vx = bilinear_numpy(gx, x0, y0, h, hy, xm, ym)
        vy = bilinear_numpy(gy, x0, y0, h, hy, xm, ym)
        g = np.hypot(vx, vy)
        stall |= g < stall_tol
        status[idx[stall]] = TRACE_STALL
        active[idx[stall]] = False
        ok = ~stall
        idx, xa, ya, s, vx, vy, g = idx[ok], xa[ok], ya[ok], s[ok], vx[ok], vy[ok], g[ok]
        x[idx] = np.clip(xa - s * vx / g, x0, x1)
        y[idx] = np.clip(ya - s * vy / g, y0, y1)
        px[idx, count[idx]] = x[idx]
        py[idx, count[idx]] = y[idx]
        count[idx] += 1
    left = np.flatnonzero(active)
    fin = np.hypot(x[left] - sx, y[left] - sy) <= stop_r
    status[left[fin]] = TRACE_OK
    return px, py, count, status


def trace(gx, gy, x0, y0, h, hy, x1, y1, sx, sy, tx, ty, step, stop_r, max_steps, stall_tol=1e-8):
    args = (
        np.ascontiguousarray(gx, dtype=np.float64),
        np.ascontiguousarray(gy, dtype=np.float64),
        float(x0), float(y0), float(h), float(hy), float(x1), float(y1),
        float(sx), float(sy),
        np.ascontiguousarray(tx, dtype=np.float64),
        np.ascontiguousarray(ty, dtype=np.float64),
        float(step), float(stop_r), int(max_steps), float(stall_tol),
    )
    if USE_NUMBA:
        return trace_numba(*args)
    return trace_numpy(*args)
