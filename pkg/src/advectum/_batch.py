"""Vectorized (pure-numpy) advection engine and shared geometry math.

This module is the reference implementation of the hot path.  The numba
kernels in ``_kernels`` mirror every formula here operation for operation
(same expression shapes, same left-to-right association, same clamp order),
which is what makes results bitwise identical across the two backends.
Change a formula in one place and you must change its twin.

All "row" helpers operate on parallel component arrays (x, y, z separated)
because the kernels work on scalars; keeping components unpacked makes the
two sides line up visually.
"""
from __future__ import annotations

import math

import numpy as np

EPS_BARY = 1e-10     # containment slack on normalized barycentric coords
WALK_LIMIT = 128     # max face hops before falling back to the cell tree

# particle status codes (shared with the kernels and the public enum)
ST_ACTIVE = 0
ST_STEPS = 1
ST_BOUNDS = 2
ST_TIME = 3

# solver codes
SK_EULER = 0
SK_RK4 = 1
SK_RKF45 = 2

# Fehlberg 4(5) tableau.  Stage weights rows, then the 5th-order (propagated)
# and 4th-order (error companion) combination weights.
A21 = 1.0 / 4.0
A31 = 3.0 / 32.0
A32 = 9.0 / 32.0
A41 = 1932.0 / 2197.0
A42 = -7200.0 / 2197.0
A43 = 7296.0 / 2197.0
A51 = 439.0 / 216.0
A52 = -8.0
A53 = 3680.0 / 513.0
A54 = -845.0 / 4104.0
A61 = -8.0 / 27.0
A62 = 2.0
A63 = -3544.0 / 2565.0
A64 = 1859.0 / 4104.0
A65 = -11.0 / 40.0
B51 = 16.0 / 135.0
B53 = 6656.0 / 12825.0
B54 = 28561.0 / 56430.0
B55 = -9.0 / 50.0
B56 = 2.0 / 55.0
B41 = 25.0 / 216.0
B43 = 1408.0 / 2565.0
B44 = 2197.0 / 4104.0
B45 = -1.0 / 5.0


# --------------------------------------------------------------------------
# structured-grid location + interpolation


def axis_uniform(x, origin, spacing, npts):
    """Cell index and unit-cell fraction along one uniform axis."""
    t = (x - origin) / spacing
    c = np.floor(t)
    c = np.maximum(c, 0.0)
    c = np.minimum(c, float(npts - 2))
    i = c.astype(np.int64)
    f = t - c
    f = np.maximum(f, 0.0)
    f = np.minimum(f, 1.0)
    return i, f


def axis_rect(x, coords):
    """Cell index and fraction along one rectilinear axis.

    Ties on interior planes resolve to the higher interval (side="right"),
    the exact upper boundary to the last interval with fraction 1.
    """
    n = len(coords)
    i = np.searchsorted(coords, x, side="right") - 1
    i = np.maximum(i, 0)
    i = np.minimum(i, n - 2)
    c0 = coords[i]
    f = (x - c0) / (coords[i + 1] - c0)
    f = np.maximum(f, 0.0)
    f = np.minimum(f, 1.0)
    return i, f


def inside_box(px, py, pz, lo, hi):
    return ((px >= lo[0]) & (px <= hi[0])
            & (py >= lo[1]) & (py <= hi[1])
            & (pz >= lo[2]) & (pz <= hi[2]))


def trilinear_rows(vel, nx, ny, ix, iy, iz, fx, fy, fz):
    """Blend the 8 cell corners; vertex numbering is x-fastest."""
    base = ix + nx * (iy + ny * iz)
    nxny = nx * ny
    c000 = vel[base]
    c100 = vel[base + 1]
    c010 = vel[base + nx]
    c110 = vel[base + nx + 1]
    c001 = vel[base + nxny]
    c101 = vel[base + nxny + 1]
    c011 = vel[base + nxny + nx]
    c111 = vel[base + nxny + nx + 1]
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
    out = []
    for a in range(3):
        out.append(
            w000 * c000[..., a] + w100 * c100[..., a]
            + w010 * c010[..., a] + w110 * c110[..., a]
            + w001 * c001[..., a] + w101 * c101[..., a]
            + w011 * c011[..., a] + w111 * c111[..., a]
        )
    return out[0], out[1], out[2]


def eval_structured_rows(px, py, pz, is_rect, origin, spacing, dims,
                         cx, cy, cz, bmin, bmax, vel):
    """Velocity at points of a structured grid.

    Returns ``(inside, vx, vy, vz)``; velocity lanes where ``inside`` is
    False hold unspecified finite values and must be masked by the caller.
    """
    inside = inside_box(px, py, pz, bmin, bmax)
    nx = int(dims[0])
    ny = int(dims[1])
    nz = int(dims[2])
    if is_rect:
        ix, fx = axis_rect(px, cx)
        iy, fy = axis_rect(py, cy)
        iz, fz = axis_rect(pz, cz)
    else:
        ix, fx = axis_uniform(px, origin[0], spacing[0], nx)
        iy, fy = axis_uniform(py, origin[1], spacing[1], ny)
        iz, fz = axis_uniform(pz, origin[2], spacing[2], nz)
    vx, vy, vz = trilinear_rows(vel, nx, ny, ix, iy, iz, fx, fy, fz)
    return inside, vx, vy, vz


# --------------------------------------------------------------------------
# tetrahedra


def bary_rows(vertices, tets, cells, px, py, pz):
    """Barycentric coordinates of points w.r.t. their tets, shape (n, 4).

    Cramer solve of the edge-matrix system; b0 is defined as 1 - b1 - b2 - b3
    so the four coordinates sum to 1 up to rounding.
    """
    tv = tets[cells]
    v0 = vertices[tv[:, 0]]
    v1 = vertices[tv[:, 1]]
    v2 = vertices[tv[:, 2]]
    v3 = vertices[tv[:, 3]]
    e1x = v1[:, 0] - v0[:, 0]
    e1y = v1[:, 1] - v0[:, 1]
    e1z = v1[:, 2] - v0[:, 2]
    e2x = v2[:, 0] - v0[:, 0]
    e2y = v2[:, 1] - v0[:, 1]
    e2z = v2[:, 2] - v0[:, 2]
    e3x = v3[:, 0] - v0[:, 0]
    e3y = v3[:, 1] - v0[:, 1]
    e3z = v3[:, 2] - v0[:, 2]
    ppx = px - v0[:, 0]
    ppy = py - v0[:, 1]
    ppz = pz - v0[:, 2]
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
    return np.stack([b0, b1, b2, b3], axis=1)


def tet_interp_rows(vel, tets, cells, b):
    tv = tets[cells]
    v0 = vel[tv[:, 0]]
    v1 = vel[tv[:, 1]]
    v2 = vel[tv[:, 2]]
    v3 = vel[tv[:, 3]]
    b0 = b[:, 0]
    b1 = b[:, 1]
    b2 = b[:, 2]
    b3 = b[:, 3]
    vx = b0 * v0[:, 0] + b1 * v1[:, 0] + b2 * v2[:, 0] + b3 * v3[:, 0]
    vy = b0 * v0[:, 1] + b1 * v1[:, 1] + b2 * v2[:, 1] + b3 * v3[:, 1]
    vz = b0 * v0[:, 2] + b1 * v1[:, 2] + b2 * v2[:, 2] + b3 * v3[:, 2]
    return vx, vy, vz


def celltree_query_rows(tree, vertices, tets, px, py, pz):
    """Locate points with the cell tree; returns (cells, bary).

    Visits every leaf whose bounding intervals admit the point and returns
    the lowest containing tet id (the documented tie-break), or -1.
    """
    n = px.size
    ncell = len(tets)
    best = np.full(n, ncell, dtype=np.int64)
    pid = np.arange(n, dtype=np.int64)
    node = np.zeros(n, dtype=np.int64)
    cand_p = []
    cand_c = []
    while pid.size:
        ch = tree.left[node]
        leaf = ch < 0
        if leaf.any():
            lp = pid[leaf]
            ln = node[leaf]
            st = tree.start[ln]
            ct = tree.count[ln]
            tot = int(ct.sum())
            if tot:
                cs = np.cumsum(ct)
                within = np.arange(tot, dtype=np.int64) - np.repeat(cs - ct, ct)
                cand_p.append(np.repeat(lp, ct))
                cand_c.append(tree.cells[np.repeat(st, ct) + within])
        ipid = pid[~leaf]
        if ipid.size:
            inode = node[~leaf]
            ax = tree.axis[inode]
            ich = ch[~leaf]
            x = np.where(ax == 0, px[ipid], np.where(ax == 1, py[ipid], pz[ipid]))
            gl = x <= tree.lmax[inode]
            gr = x >= tree.rmin[inode]
            pid = np.concatenate([ipid[gl], ipid[gr]])
            node = np.concatenate([ich[gl], ich[gr] + 1])
        else:
            pid = np.empty(0, dtype=np.int64)
            node = pid
    if cand_p:
        cp = np.concatenate(cand_p)
        cc = np.concatenate(cand_c)
        bb = bary_rows(vertices, tets, cc, px[cp], py[cp], pz[cp])
        good = bb.min(axis=1) >= -EPS_BARY
        np.minimum.at(best, cp[good], cc[good])
    found = best < ncell
    cells = np.where(found, best, np.int64(-1))
    b = np.zeros((n, 4))
    rows = np.flatnonzero(found)
    if rows.size:
        b[rows] = bary_rows(vertices, tets, cells[rows], px[rows], py[rows], pz[rows])
    return cells, b


def eval_tet_rows(px, py, pz, cache, use_walk, tree, vertices, tets,
                  neighbors, vel, bmin, bmax):
    """Velocity on a tet mesh with per-particle cell caching.

    ``cache`` holds each lane's last known cell (-1 when unknown) and is
    updated in place to the located cell.  Walk resolution: start from the
    cached cell, hop across the face of the most negative barycentric
    coordinate; strictly interior hits are returned directly, boundary ties
    and failed walks defer to the cell tree so every path applies the same
    lowest-id tie-break.
    """
    n = px.size
    found = np.full(n, -1, dtype=np.int64)
    b = np.zeros((n, 4))
    inbox = inside_box(px, py, pz, bmin, bmax)
    pend = inbox & (cache >= 0) if use_walk else np.zeros(n, dtype=bool)
    need_tree = inbox & ~pend
    cur = np.where(pend, cache, 0)
    for rnd in range(WALK_LIMIT + 1):
        r = np.flatnonzero(pend)
        if not r.size:
            break
        bb = bary_rows(vertices, tets, cur[r], px[r], py[r], pz[r])
        k = np.argmin(bb, axis=1)
        minb = bb[np.arange(len(r)), k]
        contained = minb >= -EPS_BARY
        interior = minb > EPS_BARY
        hit = contained & interior
        rows_hit = r[hit]
        found[rows_hit] = cur[rows_hit]
        b[rows_hit] = bb[hit]
        tie = contained & ~interior
        need_tree[r[tie]] = True
        pend[r[contained]] = False
        mov = r[~contained]
        if rnd == WALK_LIMIT:
            need_tree[mov] = True
            pend[mov] = False
        elif mov.size:
            nb = neighbors[cur[mov], k[~contained]]
            dead = nb < 0
            need_tree[mov[dead]] = True
            pend[mov[dead]] = False
            cur[mov[~dead]] = nb[~dead]
    tr = np.flatnonzero(need_tree)
    if tr.size:
        cells_t, b_t = celltree_query_rows(tree, vertices, tets,
                                           px[tr], py[tr], pz[tr])
        found[tr] = cells_t
        b[tr] = b_t
    cache[:] = found
    inside = found >= 0
    vx = np.zeros(n)
    vy = np.zeros(n)
    vz = np.zeros(n)
    rows = np.flatnonzero(inside)
    if rows.size:
        ivx, ivy, ivz = tet_interp_rows(vel, tets, found[rows],
                                        b[rows])
        vx[rows] = ivx
        vy[rows] = ivy
        vz[rows] = ivz
    return inside, vx, vy, vz


# --------------------------------------------------------------------------
# advection engines
#
# Both engines advance particles [start, stop) of the shared state arrays in
# place.  State: pos (P,3), tim (P,), steps (P,), status (P,), h_carry (P,),
# cache (P,), loc_n/itp_n (P,) and the optional traj buffer (P, max_steps+1, 4).
# max_time < 0 disables the time criterion.


def _commit_rows(pos, tim, steps, status, traj, store_traj, idx, commit,
                 nxp, nyp, nzp, h_used, max_steps, max_time):
    """Apply one committed step and the termination checks; returns live idx."""
    crows = idx[commit]
    pos[crows, 0] = nxp[commit]
    pos[crows, 1] = nyp[commit]
    pos[crows, 2] = nzp[commit]
    steps[crows] += 1
    tim[crows] += h_used[commit] if isinstance(h_used, np.ndarray) else h_used
    if store_traj and crows.size:
        srow = steps[crows]
        traj[crows, srow, 0] = nxp[commit]
        traj[crows, srow, 1] = nyp[commit]
        traj[crows, srow, 2] = nzp[commit]
        traj[crows, srow, 3] = tim[crows]
    status[idx[~commit]] = ST_BOUNDS
    done = steps[crows] >= max_steps
    status[crows[done]] = ST_STEPS
    if max_time >= 0.0:
        trows = crows[~done]
        tdone = tim[trows] >= max_time
        status[trows[tdone]] = ST_TIME
    return crows[status[crows] == ST_ACTIVE]


def _fixed_step_rows(evalf, idx, pos, loc_n, itp_n, solver_kind, h):
    """One Euler or RK4 attempt for every row of idx.

    Returns (all_stages_ok, nxp, nyp, nzp); counters are updated for each
    attempted stage (a stage is attempted only when all prior stages
    evaluated inside the domain).
    """
    px = pos[idx, 0]
    py = pos[idx, 1]
    pz = pos[idx, 2]
    in1, k1x, k1y, k1z = evalf(px, py, pz, idx)
    loc_n[idx] += 1
    itp_n[idx] += in1
    if solver_kind == SK_EULER:
        nxp = px + h * k1x
        nyp = py + h * k1y
        nzp = pz + h * k1z
        return in1, nxp, nyp, nzp
    h2 = 0.5 * h
    h6 = h / 6.0
    y2x = px + h2 * k1x
    y2y = py + h2 * k1y
    y2z = pz + h2 * k1z
    in2, k2x, k2y, k2z = evalf(y2x, y2y, y2z, idx)
    ok2 = in1 & in2
    loc_n[idx] += in1
    itp_n[idx] += ok2
    y3x = px + h2 * k2x
    y3y = py + h2 * k2y
    y3z = pz + h2 * k2z
    in3, k3x, k3y, k3z = evalf(y3x, y3y, y3z, idx)
    ok3 = ok2 & in3
    loc_n[idx] += ok2
    itp_n[idx] += ok3
    y4x = px + h * k3x
    y4y = py + h * k3y
    y4z = pz + h * k3z
    in4, k4x, k4y, k4z = evalf(y4x, y4y, y4z, idx)
    ok4 = ok3 & in4
    loc_n[idx] += ok3
    itp_n[idx] += ok4
    sx = ((k1x + 2.0 * k2x) + 2.0 * k3x) + k4x
    sy = ((k1y + 2.0 * k2y) + 2.0 * k3y) + k4y
    sz = ((k1z + 2.0 * k2z) + 2.0 * k3z) + k4z
    nxp = px + h6 * sx
    nyp = py + h6 * sy
    nzp = pz + h6 * sz
    return ok4, nxp, nyp, nzp


def _pow_fifth(x: np.ndarray) -> np.ndarray:
    # elementwise libm pow(x, 0.2): numpy's vectorized ** rounds some inputs
    # differently by an ulp, and the numba twin (which lowers to libm pow)
    # must match it bitwise
    out = np.empty_like(x)
    for i in range(x.size):
        out[i] = math.pow(x[i], 0.2)
    return out


def _rkf45_step_rows(evalf, idx, pos, loc_n, itp_n, h_carry, tol, h_min, h_max):
    """One committed adaptive step (attempt loop to completion) per row.

    Returns (accepted, exited, nxp, nyp, nzp, h_used); h_carry is updated
    with the accepted rows' next-step proposals.
    """
    n = idx.size
    px = pos[idx, 0]
    py = pos[idx, 1]
    pz = pos[idx, 2]
    htry = h_carry[idx].copy()
    acc = np.zeros(n, dtype=bool)
    exi = np.zeros(n, dtype=bool)
    nxp = px.copy()
    nyp = py.copy()
    nzp = pz.copy()
    h_used = np.zeros(n)
    pend = np.ones(n, dtype=bool)
    while True:
        r = np.flatnonzero(pend)
        if not r.size:
            break
        rows = idx[r]
        hx = htry[r]
        sx = px[r]
        sy = py[r]
        sz = pz[r]
        in1, k1x, k1y, k1z = evalf(sx, sy, sz, rows)
        loc_n[rows] += 1
        itp_n[rows] += in1
        y2x = sx + hx * (A21 * k1x)
        y2y = sy + hx * (A21 * k1y)
        y2z = sz + hx * (A21 * k1z)
        in2, k2x, k2y, k2z = evalf(y2x, y2y, y2z, rows)
        ok2 = in1 & in2
        loc_n[rows] += in1
        itp_n[rows] += ok2
        y3x = sx + hx * (A31 * k1x + A32 * k2x)
        y3y = sy + hx * (A31 * k1y + A32 * k2y)
        y3z = sz + hx * (A31 * k1z + A32 * k2z)
        in3, k3x, k3y, k3z = evalf(y3x, y3y, y3z, rows)
        ok3 = ok2 & in3
        loc_n[rows] += ok2
        itp_n[rows] += ok3
        y4x = sx + hx * (A41 * k1x + A42 * k2x + A43 * k3x)
        y4y = sy + hx * (A41 * k1y + A42 * k2y + A43 * k3y)
        y4z = sz + hx * (A41 * k1z + A42 * k2z + A43 * k3z)
        in4, k4x, k4y, k4z = evalf(y4x, y4y, y4z, rows)
        ok4 = ok3 & in4
        loc_n[rows] += ok3
        itp_n[rows] += ok4
        y5x = sx + hx * (A51 * k1x + A52 * k2x + A53 * k3x + A54 * k4x)
        y5y = sy + hx * (A51 * k1y + A52 * k2y + A53 * k3y + A54 * k4y)
        y5z = sz + hx * (A51 * k1z + A52 * k2z + A53 * k3z + A54 * k4z)
        in5, k5x, k5y, k5z = evalf(y5x, y5y, y5z, rows)
        ok5 = ok4 & in5
        loc_n[rows] += ok4
        itp_n[rows] += ok5
        y6x = sx + hx * (A61 * k1x + A62 * k2x + A63 * k3x + A64 * k4x + A65 * k5x)
        y6y = sy + hx * (A61 * k1y + A62 * k2y + A63 * k3y + A64 * k4y + A65 * k5y)
        y6z = sz + hx * (A61 * k1z + A62 * k2z + A63 * k3z + A64 * k4z + A65 * k5z)
        in6, k6x, k6y, k6z = evalf(y6x, y6y, y6z, rows)
        ok6 = ok5 & in6
        loc_n[rows] += ok5
        itp_n[rows] += ok6
        p5x = sx + hx * (B51 * k1x + B53 * k3x + B54 * k4x + B55 * k5x + B56 * k6x)
        p5y = sy + hx * (B51 * k1y + B53 * k3y + B54 * k4y + B55 * k5y + B56 * k6y)
        p5z = sz + hx * (B51 * k1z + B53 * k3z + B54 * k4z + B55 * k5z + B56 * k6z)
        p4x = sx + hx * (B41 * k1x + B43 * k3x + B44 * k4x + B45 * k5x)
        p4y = sy + hx * (B41 * k1y + B43 * k3y + B44 * k4y + B45 * k5y)
        p4z = sz + hx * (B41 * k1z + B43 * k3z + B44 * k4z + B45 * k5z)
        ex = p5x - p4x
        ey = p5y - p4y
        ez = p5z - p4z
        err = np.sqrt(ex * ex + ey * ey + ez * ez)

        stage_exit = ~ok6
        exi[r[stage_exit]] = True
        pend[r[stage_exit]] = False
        live = ~stage_exit

        accept_now = live & (err <= tol)          # NaN compares False
        finite = np.isfinite(err)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            ratio = tol / err
        fac = 0.9 * _pow_fifth(ratio)
        hn = hx * fac
        hn = np.maximum(hn, h_min)
        hn = np.minimum(hn, h_max)
        hn = np.where(finite, hn, h_min)
        floor_hit = live & ~accept_now & (hn >= hx)
        forced = floor_hit & finite
        overflow = floor_hit & ~finite
        exi[r[overflow]] = True
        pend[r[overflow]] = False

        take = accept_now | forced
        tr = r[take]
        acc[tr] = True
        pend[tr] = False
        nxp[tr] = p5x[take]
        nyp[tr] = p5y[take]
        nzp[tr] = p5z[take]
        h_used[tr] = hx[take]
        prop = np.where((err == 0.0) & accept_now, h_max, hn)
        htry[tr] = prop[take]

        retry = live & ~take & ~overflow
        htry[r[retry]] = hn[retry]
    h_carry[idx[acc]] = htry[acc]
    return acc, exi, nxp, nyp, nzp, h_used


def make_structured_eval(is_rect, origin, spacing, dims, cx, cy, cz,
                         bmin, bmax, vel):
    def evalf(px, py, pz, rows):
        return eval_structured_rows(px, py, pz, is_rect, origin, spacing,
                                    dims, cx, cy, cz, bmin, bmax, vel)
    return evalf


def make_tet_eval(cache, use_walk, tree, vertices, tets, neighbors, vel,
                  bmin, bmax):
    def evalf(px, py, pz, rows):
        local = cache[rows].copy()
        inside, vx, vy, vz = eval_tet_rows(px, py, pz, local, use_walk, tree,
                                           vertices, tets, neighbors, vel,
                                           bmin, bmax)
        cache[rows] = local
        return inside, vx, vy, vz
    return evalf


def advance_rows(evalf, pos, tim, steps, status, h_carry, loc_n, itp_n, traj,
                 start, stop, solver_kind, h, tol, h_min, h_max,
                 max_steps, max_time, tmin, tmax, store_traj):
    """Advance particles [start, stop) to termination (numpy engine)."""
    idx = np.arange(start, stop, dtype=np.int64)
    idx = idx[status[idx] == ST_ACTIVE]
    while idx.size:
        if solver_kind == SK_RKF45:
            acc, exi, nxp, nyp, nzp, h_used = _rkf45_step_rows(
                evalf, idx, pos, loc_n, itp_n, h_carry, tol, h_min, h_max)
            stage_ok = acc
        else:
            stage_ok, nxp, nyp, nzp = _fixed_step_rows(
                evalf, idx, pos, loc_n, itp_n, solver_kind, h)
            h_used = h
        landing = inside_box(nxp, nyp, nzp, tmin, tmax)
        commit = stage_ok & landing
        idx = _commit_rows(pos, tim, steps, status, traj, store_traj, idx,
                           commit, nxp, nyp, nzp, h_used, max_steps, max_time)
