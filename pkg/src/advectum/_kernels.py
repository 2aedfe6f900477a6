"""numba kernels for the advection hot path.

Every formula here mirrors its twin in ``_batch`` operation for operation
(same expression shapes, same association, same clamp order) so that both
backends produce bitwise-identical trajectories.  SVML is disabled before
numba is imported to keep pow/sqrt on libm, matching numpy; kernels are
compiled without fastmath for the same reason.

Kernels run with ``nogil=True``: worker threads advancing disjoint particle
blocks execute concurrently.
"""
from __future__ import annotations

import math
import os

os.environ.setdefault("NUMBA_DISABLE_INTEL_SVML", "1")

import numpy as np
from numba import njit

from ._batch import (
    EPS_BARY, WALK_LIMIT,
    ST_ACTIVE, ST_STEPS, ST_BOUNDS, ST_TIME,
    A21, A31, A32, A41, A42, A43, A51, A52, A53, A54,
    A61, A62, A63, A64, A65,
    B51, B53, B54, B55, B56, B41, B43, B44, B45,
)

JIT = njit(cache=True, nogil=True)


@JIT
def _axis_uniform(x, o, s, npts):
    t = (x - o) / s
    c = np.floor(t)
    if c < 0.0:
        c = 0.0
    m = float(npts - 2)
    if c > m:
        c = m
    i = int(c)
    f = t - c
    if f < 0.0:
        f = 0.0
    if f > 1.0:
        f = 1.0
    return i, f


@JIT
def _axis_rect(x, coords):
    # replicates searchsorted(side="right") - 1 with clamping
    n = coords.shape[0]
    lo = 0
    hi = n
    while lo < hi:
        mid = (lo + hi) >> 1
        if x < coords[mid]:
            hi = mid
        else:
            lo = mid + 1
    i = lo - 1
    if i < 0:
        i = 0
    if i > n - 2:
        i = n - 2
    c0 = coords[i]
    f = (x - c0) / (coords[i + 1] - c0)
    if f < 0.0:
        f = 0.0
    if f > 1.0:
        f = 1.0
    return i, f


@JIT
def _eval_structured(px, py, pz, is_rect, origin, spacing, dims,
                     cx, cy, cz, bmin, bmax, vel):
    inside = (px >= bmin[0] and px <= bmax[0]
              and py >= bmin[1] and py <= bmax[1]
              and pz >= bmin[2] and pz <= bmax[2])
    if not inside:
        return False, 0.0, 0.0, 0.0
    nx = dims[0]
    ny = dims[1]
    if is_rect:
        ix, fx = _axis_rect(px, cx)
        iy, fy = _axis_rect(py, cy)
        iz, fz = _axis_rect(pz, cz)
    else:
        ix, fx = _axis_uniform(px, origin[0], spacing[0], dims[0])
        iy, fy = _axis_uniform(py, origin[1], spacing[1], dims[1])
        iz, fz = _axis_uniform(pz, origin[2], spacing[2], dims[2])
    base = ix + nx * (iy + ny * iz)
    nxny = nx * ny
    i000 = base
    i100 = base + 1
    i010 = base + nx
    i110 = base + nx + 1
    i001 = base + nxny
    i101 = base + nxny + 1
    i011 = base + nxny + nx
    i111 = base + nxny + nx + 1
    gx = 1.0 - fx
    gy = 1.0 - fy
    gz = 1.0 - fz
    w000 = gx * gy * gz
    w100 = fx * gy * gz
    w010 = gx * fy * gz
    w110 = fx * fy * gz
    w001 = gx * gy * fz
    w101 = fx * gy * fz
    w011 = gx * fy * fz
    w111 = fx * fy * fz
    vx = (w000 * vel[i000, 0] + w100 * vel[i100, 0]
          + w010 * vel[i010, 0] + w110 * vel[i110, 0]
          + w001 * vel[i001, 0] + w101 * vel[i101, 0]
          + w011 * vel[i011, 0] + w111 * vel[i111, 0])
    vy = (w000 * vel[i000, 1] + w100 * vel[i100, 1]
          + w010 * vel[i010, 1] + w110 * vel[i110, 1]
          + w001 * vel[i001, 1] + w101 * vel[i101, 1]
          + w011 * vel[i011, 1] + w111 * vel[i111, 1])
    vz = (w000 * vel[i000, 2] + w100 * vel[i100, 2]
          + w010 * vel[i010, 2] + w110 * vel[i110, 2]
          + w001 * vel[i001, 2] + w101 * vel[i101, 2]
          + w011 * vel[i011, 2] + w111 * vel[i111, 2])
    return True, vx, vy, vz


@JIT
def _bary(vertices, tets, cell, px, py, pz):
    a = tets[cell, 0]
    b = tets[cell, 1]
    c = tets[cell, 2]
    d4 = tets[cell, 3]
    v0x = vertices[a, 0]
    v0y = vertices[a, 1]
    v0z = vertices[a, 2]
    e1x = vertices[b, 0] - v0x
    e1y = vertices[b, 1] - v0y
    e1z = vertices[b, 2] - v0z
    e2x = vertices[c, 0] - v0x
    e2y = vertices[c, 1] - v0y
    e2z = vertices[c, 2] - v0z
    e3x = vertices[d4, 0] - v0x
    e3y = vertices[d4, 1] - v0y
    e3z = vertices[d4, 2] - v0z
    ppx = px - v0x
    ppy = py - v0y
    ppz = pz - v0z
    d = (e1x * (e2y * e3z - e2z * e3y)
         - e1y * (e2x * e3z - e2z * e3x)
         + e1z * (e2x * e3y - e2y * e3x))
    b1 = (ppx * (e2y * e3z - e2z * e3y)
          - ppy * (e2x * e3z - e2z * e3x)
          + ppz * (e2x * e3y - e2y * e3x)) / d
    b2 = (e1x * (ppy * e3z - ppz * e3y)
          - e1y * (ppx * e3z - ppz * e3x)
          + e1z * (ppx * e3y - ppy * e3x)) / d
    b3 = (e1x * (e2y * ppz - e2z * ppy)
          - e1y * (e2x * ppz - e2z * ppx)
          + e1z * (e2x * ppy - e2y * ppx)) / d
    b0 = 1.0 - b1 - b2 - b3
    return b0, b1, b2, b3


@JIT
def _tree_query(taxis, tlmax, trmin, tleft, tstart, tcount, tcells,
                vertices, tets, px, py, pz, stack):
    """Lowest containing tet id via the cell tree, or -1."""
    ncell = tets.shape[0]
    best = ncell
    bb0 = 0.0
    bb1 = 0.0
    bb2 = 0.0
    bb3 = 0.0
    top = 1
    stack[0] = 0
    while top > 0:
        top -= 1
        nd = stack[top]
        ch = tleft[nd]
        if ch < 0:
            s = tstart[nd]
            e = s + tcount[nd]
            for j in range(s, e):
                cell = tcells[j]
                b0, b1, b2, b3 = _bary(vertices, tets, cell, px, py, pz)
                minb = b0
                if b1 < minb:
                    minb = b1
                if b2 < minb:
                    minb = b2
                if b3 < minb:
                    minb = b3
                if minb >= -EPS_BARY and cell < best:
                    best = cell
                    bb0 = b0
                    bb1 = b1
                    bb2 = b2
                    bb3 = b3
        else:
            ax = taxis[nd]
            x = px if ax == 0 else (py if ax == 1 else pz)
            if x <= tlmax[nd]:
                stack[top] = ch
                top += 1
            if x >= trmin[nd]:
                stack[top] = ch + 1
                top += 1
    if best >= ncell:
        return -1, 0.0, 0.0, 0.0, 0.0
    return best, bb0, bb1, bb2, bb3


@JIT
def _eval_tet(px, py, pz, cache_cell, use_walk,
              taxis, tlmax, trmin, tleft, tstart, tcount, tcells,
              vertices, tets, neighbors, vel, bmin, bmax, stack):
    inside_box = (px >= bmin[0] and px <= bmax[0]
                  and py >= bmin[1] and py <= bmax[1]
                  and pz >= bmin[2] and pz <= bmax[2])
    if not inside_box:
        return False, 0.0, 0.0, 0.0, np.int64(-1)
    found = np.int64(-1)
    fb0 = 0.0
    fb1 = 0.0
    fb2 = 0.0
    fb3 = 0.0
    direct = False
    if use_walk and cache_cell >= 0:
        cell = cache_cell
        hops = 0
        while True:
            b0, b1, b2, b3 = _bary(vertices, tets, cell, px, py, pz)
            minb = b0
            k = 0
            if b1 < minb:
                minb = b1
                k = 1
            if b2 < minb:
                minb = b2
                k = 2
            if b3 < minb:
                minb = b3
                k = 3
            if minb >= -EPS_BARY:
                if minb > EPS_BARY:
                    # strictly interior: unique owner, no tie to resolve
                    found = cell
                    fb0 = b0
                    fb1 = b1
                    fb2 = b2
                    fb3 = b3
                    direct = True
                break
            if hops >= WALK_LIMIT:
                break
            nb = neighbors[cell, k]
            if nb < 0:
                break
            cell = nb
            hops += 1
    if not direct:
        found, fb0, fb1, fb2, fb3 = _tree_query(
            taxis, tlmax, trmin, tleft, tstart, tcount, tcells,
            vertices, tets, px, py, pz, stack)
    if found < 0:
        return False, 0.0, 0.0, 0.0, np.int64(-1)
    a = tets[found, 0]
    b = tets[found, 1]
    c = tets[found, 2]
    d4 = tets[found, 3]
    vx = fb0 * vel[a, 0] + fb1 * vel[b, 0] + fb2 * vel[c, 0] + fb3 * vel[d4, 0]
    vy = fb0 * vel[a, 1] + fb1 * vel[b, 1] + fb2 * vel[c, 1] + fb3 * vel[d4, 1]
    vz = fb0 * vel[a, 2] + fb1 * vel[b, 2] + fb2 * vel[c, 2] + fb3 * vel[d4, 2]
    return True, vx, vy, vz, found


@JIT
def advance_structured(pos, tim, steps, status, h_carry, loc_n, itp_n, traj,
                       start, stop, is_rect, origin, spacing, dims,
                       cx, cy, cz, bmin, bmax, vel,
                       solver_kind, h, tol, h_min, h_max,
                       max_steps, max_time, tmin, tmax, store_traj):
    h2 = 0.5 * h
    h6 = h / 6.0
    for i in range(start, stop):
        if status[i] != ST_ACTIVE:
            continue
        px = pos[i, 0]
        py = pos[i, 1]
        pz = pos[i, 2]
        t = tim[i]
        ns = steps[i]
        htry = h_carry[i]
        nloc = 0
        nitp = 0
        st = ST_ACTIVE
        while True:
            nxp = px
            nyp = py
            nzp = pz
            hu = h
            if solver_kind == 0:
                in1, k1x, k1y, k1z = _eval_structured(
                    px, py, pz, is_rect, origin, spacing, dims,
                    cx, cy, cz, bmin, bmax, vel)
                nloc += 1
                if not in1:
                    st = ST_BOUNDS
                    break
                nitp += 1
                nxp = px + h * k1x
                nyp = py + h * k1y
                nzp = pz + h * k1z
            elif solver_kind == 1:
                in1, k1x, k1y, k1z = _eval_structured(
                    px, py, pz, is_rect, origin, spacing, dims,
                    cx, cy, cz, bmin, bmax, vel)
                nloc += 1
                if not in1:
                    st = ST_BOUNDS
                    break
                nitp += 1
                y2x = px + h2 * k1x
                y2y = py + h2 * k1y
                y2z = pz + h2 * k1z
                in2, k2x, k2y, k2z = _eval_structured(
                    y2x, y2y, y2z, is_rect, origin, spacing, dims,
                    cx, cy, cz, bmin, bmax, vel)
                nloc += 1
                if not in2:
                    st = ST_BOUNDS
                    break
                nitp += 1
                y3x = px + h2 * k2x
                y3y = py + h2 * k2y
                y3z = pz + h2 * k2z
                in3, k3x, k3y, k3z = _eval_structured(
                    y3x, y3y, y3z, is_rect, origin, spacing, dims,
                    cx, cy, cz, bmin, bmax, vel)
                nloc += 1
                if not in3:
                    st = ST_BOUNDS
                    break
                nitp += 1
                y4x = px + h * k3x
                y4y = py + h * k3y
                y4z = pz + h * k3z
                in4, k4x, k4y, k4z = _eval_structured(
                    y4x, y4y, y4z, is_rect, origin, spacing, dims,
                    cx, cy, cz, bmin, bmax, vel)
                nloc += 1
                if not in4:
                    st = ST_BOUNDS
                    break
                nitp += 1
                sx = ((k1x + 2.0 * k2x) + 2.0 * k3x) + k4x
                sy = ((k1y + 2.0 * k2y) + 2.0 * k3y) + k4y
                sz = ((k1z + 2.0 * k2z) + 2.0 * k3z) + k4z
                nxp = px + h6 * sx
                nyp = py + h6 * sy
                nzp = pz + h6 * sz
            else:
                accepted = False
                exited = False
                while True:
                    in1, k1x, k1y, k1z = _eval_structured(
                        px, py, pz, is_rect, origin, spacing, dims,
                        cx, cy, cz, bmin, bmax, vel)
                    nloc += 1
                    if not in1:
                        exited = True
                        break
                    nitp += 1
                    y2x = px + htry * (A21 * k1x)
                    y2y = py + htry * (A21 * k1y)
                    y2z = pz + htry * (A21 * k1z)
                    in2, k2x, k2y, k2z = _eval_structured(
                        y2x, y2y, y2z, is_rect, origin, spacing, dims,
                        cx, cy, cz, bmin, bmax, vel)
                    nloc += 1
                    if not in2:
                        exited = True
                        break
                    nitp += 1
                    y3x = px + htry * (A31 * k1x + A32 * k2x)
                    y3y = py + htry * (A31 * k1y + A32 * k2y)
                    y3z = pz + htry * (A31 * k1z + A32 * k2z)
                    in3, k3x, k3y, k3z = _eval_structured(
                        y3x, y3y, y3z, is_rect, origin, spacing, dims,
                        cx, cy, cz, bmin, bmax, vel)
                    nloc += 1
                    if not in3:
                        exited = True
                        break
                    nitp += 1
                    y4x = px + htry * (A41 * k1x + A42 * k2x + A43 * k3x)
                    y4y = py + htry * (A41 * k1y + A42 * k2y + A43 * k3y)
                    y4z = pz + htry * (A41 * k1z + A42 * k2z + A43 * k3z)
                    in4, k4x, k4y, k4z = _eval_structured(
                        y4x, y4y, y4z, is_rect, origin, spacing, dims,
                        cx, cy, cz, bmin, bmax, vel)
                    nloc += 1
                    if not in4:
                        exited = True
                        break
                    nitp += 1
                    y5x = px + htry * (A51 * k1x + A52 * k2x + A53 * k3x + A54 * k4x)
                    y5y = py + htry * (A51 * k1y + A52 * k2y + A53 * k3y + A54 * k4y)
                    y5z = pz + htry * (A51 * k1z + A52 * k2z + A53 * k3z + A54 * k4z)
                    in5, k5x, k5y, k5z = _eval_structured(
                        y5x, y5y, y5z, is_rect, origin, spacing, dims,
                        cx, cy, cz, bmin, bmax, vel)
                    nloc += 1
                    if not in5:
                        exited = True
                        break
                    nitp += 1
                    y6x = px + htry * (A61 * k1x + A62 * k2x + A63 * k3x
                                       + A64 * k4x + A65 * k5x)
                    y6y = py + htry * (A61 * k1y + A62 * k2y + A63 * k3y
                                       + A64 * k4y + A65 * k5y)
                    y6z = pz + htry * (A61 * k1z + A62 * k2z + A63 * k3z
                                       + A64 * k4z + A65 * k5z)
                    in6, k6x, k6y, k6z = _eval_structured(
                        y6x, y6y, y6z, is_rect, origin, spacing, dims,
                        cx, cy, cz, bmin, bmax, vel)
                    nloc += 1
                    if not in6:
                        exited = True
                        break
                    nitp += 1
                    p5x = px + htry * (B51 * k1x + B53 * k3x + B54 * k4x
                                       + B55 * k5x + B56 * k6x)
                    p5y = py + htry * (B51 * k1y + B53 * k3y + B54 * k4y
                                       + B55 * k5y + B56 * k6y)
                    p5z = pz + htry * (B51 * k1z + B53 * k3z + B54 * k4z
                                       + B55 * k5z + B56 * k6z)
                    p4x = px + htry * (B41 * k1x + B43 * k3x + B44 * k4x + B45 * k5x)
                    p4y = py + htry * (B41 * k1y + B43 * k3y + B44 * k4y + B45 * k5y)
                    p4z = pz + htry * (B41 * k1z + B43 * k3z + B44 * k4z + B45 * k5z)
                    ex = p5x - p4x
                    ey = p5y - p4y
                    ez = p5z - p4z
                    err = math.sqrt(ex * ex + ey * ey + ez * ez)
                    if err <= tol:
                        accepted = True
                        hu = htry
                        nxp = p5x
                        nyp = p5y
                        nzp = p5z
                        if err == 0.0:
                            htry = h_max
                        else:
                            fac = 0.9 * math.pow(tol / err, 0.2)
                            hn = htry * fac
                            if hn < h_min:
                                hn = h_min
                            if hn > h_max:
                                hn = h_max
                            htry = hn
                        break
                    if math.isfinite(err):
                        fac = 0.9 * math.pow(tol / err, 0.2)
                        hn = htry * fac
                        if hn < h_min:
                            hn = h_min
                        if hn > h_max:
                            hn = h_max
                    else:
                        hn = h_min
                    if hn >= htry:
                        if math.isfinite(err):
                            accepted = True
                            hu = htry
                            nxp = p5x
                            nyp = p5y
                            nzp = p5z
                            htry = hn
                        else:
                            exited = True
                        break
                    htry = hn
                if exited:
                    st = ST_BOUNDS
                    break
            if not (nxp >= tmin[0] and nxp <= tmax[0]
                    and nyp >= tmin[1] and nyp <= tmax[1]
                    and nzp >= tmin[2] and nzp <= tmax[2]):
                st = ST_BOUNDS
                break
            px = nxp
            py = nyp
            pz = nzp
            ns += 1
            t += hu
            if store_traj:
                traj[i, ns, 0] = px
                traj[i, ns, 1] = py
                traj[i, ns, 2] = pz
                traj[i, ns, 3] = t
            if ns >= max_steps:
                st = ST_STEPS
                break
            if max_time >= 0.0 and t >= max_time:
                st = ST_TIME
                break
        pos[i, 0] = px
        pos[i, 1] = py
        pos[i, 2] = pz
        tim[i] = t
        steps[i] = ns
        status[i] = st
        h_carry[i] = htry
        loc_n[i] += nloc
        itp_n[i] += nitp


@JIT
def advance_tet(pos, tim, steps, status, h_carry, cache, loc_n, itp_n, traj,
                start, stop, use_walk,
                taxis, tlmax, trmin, tleft, tstart, tcount, tcells,
                vertices, tets, neighbors, vel, bmin, bmax,
                solver_kind, h, tol, h_min, h_max,
                max_steps, max_time, tmin, tmax, store_traj):
    h2 = 0.5 * h
    h6 = h / 6.0
    stack = np.empty(64, dtype=np.int64)
    for i in range(start, stop):
        if status[i] != ST_ACTIVE:
            continue
        px = pos[i, 0]
        py = pos[i, 1]
        pz = pos[i, 2]
        t = tim[i]
        ns = steps[i]
        htry = h_carry[i]
        cell = cache[i]
        nloc = 0
        nitp = 0
        st = ST_ACTIVE
        while True:
            nxp = px
            nyp = py
            nzp = pz
            hu = h
            if solver_kind == 0:
                in1, k1x, k1y, k1z, cell = _eval_tet(
                    px, py, pz, cell, use_walk,
                    taxis, tlmax, trmin, tleft, tstart, tcount, tcells,
                    vertices, tets, neighbors, vel, bmin, bmax, stack)
                nloc += 1
                if not in1:
                    st = ST_BOUNDS
                    break
                nitp += 1
                nxp = px + h * k1x
                nyp = py + h * k1y
                nzp = pz + h * k1z
            elif solver_kind == 1:
                in1, k1x, k1y, k1z, cell = _eval_tet(
                    px, py, pz, cell, use_walk,
                    taxis, tlmax, trmin, tleft, tstart, tcount, tcells,
                    vertices, tets, neighbors, vel, bmin, bmax, stack)
                nloc += 1
                if not in1:
                    st = ST_BOUNDS
                    break
                nitp += 1
                y2x = px + h2 * k1x
                y2y = py + h2 * k1y
                y2z = pz + h2 * k1z
                in2, k2x, k2y, k2z, cell = _eval_tet(
                    y2x, y2y, y2z, cell, use_walk,
                    taxis, tlmax, trmin, tleft, tstart, tcount, tcells,
                    vertices, tets, neighbors, vel, bmin, bmax, stack)
                nloc += 1
                if not in2:
                    st = ST_BOUNDS
                    break
                nitp += 1
                y3x = px + h2 * k2x
                y3y = py + h2 * k2y
                y3z = pz + h2 * k2z
                in3, k3x, k3y, k3z, cell = _eval_tet(
                    y3x, y3y, y3z, cell, use_walk,
                    taxis, tlmax, trmin, tleft, tstart, tcount, tcells,
                    vertices, tets, neighbors, vel, bmin, bmax, stack)
                nloc += 1
                if not in3:
                    st = ST_BOUNDS
                    break
                nitp += 1
                y4x = px + h * k3x
                y4y = py + h * k3y
                y4z = pz + h * k3z
                in4, k4x, k4y, k4z, cell = _eval_tet(
                    y4x, y4y, y4z, cell, use_walk,
                    taxis, tlmax, trmin, tleft, tstart, tcount, tcells,
                    vertices, tets, neighbors, vel, bmin, bmax, stack)
                nloc += 1
                if not in4:
                    st = ST_BOUNDS
                    break
                nitp += 1
                sx = ((k1x + 2.0 * k2x) + 2.0 * k3x) + k4x
                sy = ((k1y + 2.0 * k2y) + 2.0 * k3y) + k4y
                sz = ((k1z + 2.0 * k2z) + 2.0 * k3z) + k4z
                nxp = px + h6 * sx
                nyp = py + h6 * sy
                nzp = pz + h6 * sz
            else:
                accepted = False
                exited = False
                while True:
                    in1, k1x, k1y, k1z, cell = _eval_tet(
                        px, py, pz, cell, use_walk,
                        taxis, tlmax, trmin, tleft, tstart, tcount, tcells,
                        vertices, tets, neighbors, vel, bmin, bmax, stack)
                    nloc += 1
                    if not in1:
                        exited = True
                        break
                    nitp += 1
                    y2x = px + htry * (A21 * k1x)
                    y2y = py + htry * (A21 * k1y)
                    y2z = pz + htry * (A21 * k1z)
                    in2, k2x, k2y, k2z, cell = _eval_tet(
                        y2x, y2y, y2z, cell, use_walk,
                        taxis, tlmax, trmin, tleft, tstart, tcount, tcells,
                        vertices, tets, neighbors, vel, bmin, bmax, stack)
                    nloc += 1
                    if not in2:
                        exited = True
                        break
                    nitp += 1
                    y3x = px + htry * (A31 * k1x + A32 * k2x)
                    y3y = py + htry * (A31 * k1y + A32 * k2y)
                    y3z = pz + htry * (A31 * k1z + A32 * k2z)
                    in3, k3x, k3y, k3z, cell = _eval_tet(
                        y3x, y3y, y3z, cell, use_walk,
                        taxis, tlmax, trmin, tleft, tstart, tcount, tcells,
                        vertices, tets, neighbors, vel, bmin, bmax, stack)
                    nloc += 1
                    if not in3:
                        exited = True
                        break
                    nitp += 1
                    y4x = px + htry * (A41 * k1x + A42 * k2x + A43 * k3x)
                    y4y = py + htry * (A41 * k1y + A42 * k2y + A43 * k3y)
                    y4z = pz + htry * (A41 * k1z + A42 * k2z + A43 * k3z)
                    in4, k4x, k4y, k4z, cell = _eval_tet(
                        y4x, y4y, y4z, cell, use_walk,
                        taxis, tlmax, trmin, tleft, tstart, tcount, tcells,
                        vertices, tets, neighbors, vel, bmin, bmax, stack)
                    nloc += 1
                    if not in4:
                        exited = True
                        break
                    nitp += 1
                    y5x = px + htry * (A51 * k1x + A52 * k2x + A53 * k3x + A54 * k4x)
                    y5y = py + htry * (A51 * k1y + A52 * k2y + A53 * k3y + A54 * k4y)
                    y5z = pz + htry * (A51 * k1z + A52 * k2z + A53 * k3z + A54 * k4z)
                    in5, k5x, k5y, k5z, cell = _eval_tet(
                        y5x, y5y, y5z, cell, use_walk,
                        taxis, tlmax, trmin, tleft, tstart, tcount, tcells,
                        vertices, tets, neighbors, vel, bmin, bmax, stack)
                    nloc += 1
                    if not in5:
                        exited = True
                        break
                    nitp += 1
                    y6x = px + htry * (A61 * k1x + A62 * k2x + A63 * k3x
                                       + A64 * k4x + A65 * k5x)
                    y6y = py + htry * (A61 * k1y + A62 * k2y + A63 * k3y
                                       + A64 * k4y + A65 * k5y)
                    y6z = pz + htry * (A61 * k1z + A62 * k2z + A63 * k3z
                                       + A64 * k4z + A65 * k5z)
                    in6, k6x, k6y, k6z, cell = _eval_tet(
                        y6x, y6y, y6z, cell, use_walk,
                        taxis, tlmax, trmin, tleft, tstart, tcount, tcells,
                        vertices, tets, neighbors, vel, bmin, bmax, stack)
                    nloc += 1
                    if not in6:
                        exited = True
                        break
                    nitp += 1
                    p5x = px + htry * (B51 * k1x + B53 * k3x + B54 * k4x
                                       + B55 * k5x + B56 * k6x)
                    p5y = py + htry * (B51 * k1y + B53 * k3y + B54 * k4y
                                       + B55 * k5y + B56 * k6y)
                    p5z = pz + htry * (B51 * k1z + B53 * k3z + B54 * k4z
                                       + B55 * k5z + B56 * k6z)
                    p4x = px + htry * (B41 * k1x + B43 * k3x + B44 * k4x + B45 * k5x)
                    p4y = py + htry * (B41 * k1y + B43 * k3y + B44 * k4y + B45 * k5y)
                    p4z = pz + htry * (B41 * k1z + B43 * k3z + B44 * k4z + B45 * k5z)
                    ex = p5x - p4x
                    ey = p5y - p4y
                    ez = p5z - p4z
                    err = math.sqrt(ex * ex + ey * ey + ez * ez)
                    if err <= tol:
                        accepted = True
                        hu = htry
                        nxp = p5x
                        nyp = p5y
                        nzp = p5z
                        if err == 0.0:
                            htry = h_max
                        else:
                            fac = 0.9 * math.pow(tol / err, 0.2)
                            hn = htry * fac
                            if hn < h_min:
                                hn = h_min
                            if hn > h_max:
                                hn = h_max
                            htry = hn
                        break
                    if math.isfinite(err):
                        fac = 0.9 * math.pow(tol / err, 0.2)
                        hn = htry * fac
                        if hn < h_min:
                            hn = h_min
                        if hn > h_max:
                            hn = h_max
                    else:
                        hn = h_min
                    if hn >= htry:
                        if math.isfinite(err):
                            accepted = True
                            hu = htry
                            nxp = p5x
                            nyp = p5y
                            nzp = p5z
                            htry = hn
                        else:
                            exited = True
                        break
                    htry = hn
                if exited:
                    st = ST_BOUNDS
                    break
            if not (nxp >= tmin[0] and nxp <= tmax[0]
                    and nyp >= tmin[1] and nyp <= tmax[1]
                    and nzp >= tmin[2] and nzp <= tmax[2]):
                st = ST_BOUNDS
                break
            px = nxp
            py = nyp
            pz = nzp
            ns += 1
            t += hu
            if store_traj:
                traj[i, ns, 0] = px
                traj[i, ns, 1] = py
                traj[i, ns, 2] = pz
                traj[i, ns, 3] = t
            if ns >= max_steps:
                st = ST_STEPS
                break
            if max_time >= 0.0 and t >= max_time:
                st = ST_TIME
                break
        pos[i, 0] = px
        pos[i, 1] = py
        pos[i, 2] = pz
        tim[i] = t
        steps[i] = ns
        status[i] = st
        h_carry[i] = htry
        cache[i] = cell
        loc_n[i] += nloc
        itp_n[i] += nitp
