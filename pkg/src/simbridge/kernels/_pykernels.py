"""Vectorized numpy implementations of the hot kernels.

These are the reference path and the fallback when the compiled extension is
unavailable. Arithmetic is written in the same order as ``_ckernels.pyx`` so
both backends produce bitwise-identical results.
"""
from __future__ import annotations

import numpy as np

HIT_GROUND = -1
HIT_NONE = -2
KIND_CUBOID = 0
KIND_CYLINDER = 1
_PARALLEL_EPS = 1e-15


def _slab(lo, ld, h):
    par = np.abs(ld) < _PARALLEL_EPS
    safe = np.where(par, 1.0, ld)
    t1 = (-h - lo) / safe
    t2 = (h - lo) / safe
    tmin = np.where(par, -np.inf, np.minimum(t1, t2))
    tmax = np.where(par, np.inf, np.maximum(t1, t2))
    miss = par & (np.abs(lo) > h)
    return tmin, tmax, miss


def _cuboid_hits(d, center, half, cs, sn):
    dx, dy, dz = d[:, 0:1], d[:, 1:2], d[:, 2:3]
    ox, oy, oz = -center[:, 0], -center[:, 1], -center[:, 2]
    lox = cs * ox + sn * oy
    loy = cs * oy - sn * ox
    loz = oz
    ldx = cs * dx + sn * dy
    ldy = cs * dy - sn * dx
    ldz = np.broadcast_to(dz, ldx.shape)
    tx0, tx1, mx = _slab(lox, ldx, half[:, 0])
    ty0, ty1, my = _slab(loy, ldy, half[:, 1])
    tz0, tz1, mz = _slab(loz, ldz, half[:, 2])
    tmins = np.stack([tx0, ty0, tz0])
    axis = np.argmax(tmins, axis=0)
    tnear = np.max(tmins, axis=0)
    tfar = np.minimum(np.minimum(tx1, ty1), tz1)
    ok = (tnear <= tfar) & (tnear > 0.0) & ~(mx | my | mz)
    lds = np.stack([ldx, ldy, ldz])
    cosi = np.abs(np.take_along_axis(lds, axis[None], axis=0)[0])
    return np.where(ok, tnear, np.inf), cosi


def _cylinder_hits(d, center, half):
    dx, dy, dz = d[:, 0:1], d[:, 1:2], d[:, 2:3]
    cx, cy, cz = center[:, 0], center[:, 1], center[:, 2]
    rad = half[:, 0]
    zlo = cz - half[:, 2]
    zhi = cz + half[:, 2]
    ox, oy = -cx, -cy
    a = dx * dx + dy * dy
    b = 2.0 * (ox * dx + oy * dy)
    cc = ox * ox + oy * oy - rad * rad
    disc = b * b - 4.0 * a * cc
    side_ok = (a > _PARALLEL_EPS) & (disc >= 0.0)
    ts = (-b - np.sqrt(np.where(side_ok, disc, 0.0))) / (2.0 * np.where(side_ok, a, 1.0))
    zs = ts * dz
    side_ok &= (ts > 0.0) & (zs >= zlo) & (zs <= zhi)
    best = np.where(side_ok, ts, np.inf)
    cosi = np.where(side_ok, np.abs((ts * dx - cx) * dx + (ts * dy - cy) * dy) / rad, 0.0)
    dz_ok = dz != 0.0
    safe_dz = np.where(dz_ok, dz, 1.0)
    adz = np.abs(dz)
    for zc in (zhi, zlo):
        tc = zc / safe_dz
        px = tc * dx - cx
        py = tc * dy - cy
        cap = dz_ok & (tc > 0.0) & (tc < best) & (px * px + py * py <= rad * rad)
        best = np.where(cap, tc, best)
        cosi = np.where(cap, adz, cosi)
    return best, cosi


def raycast(dirs, centers, halves, cos_yaw, sin_yaw, kinds, ground_z, max_range):
    """Nearest hit along unit rays from the origin.

    Returns ``(t, hit, cos_incidence)`` where ``hit`` is the object index,
    ``HIT_GROUND`` or ``HIT_NONE``. Missed rays carry ``t = inf``.
    """
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    centers = np.ascontiguousarray(centers, dtype=np.float64).reshape(-1, 3)
    halves = np.ascontiguousarray(halves, dtype=np.float64).reshape(-1, 3)
    cos_yaw = np.asarray(cos_yaw, dtype=np.float64).reshape(-1)
    sin_yaw = np.asarray(sin_yaw, dtype=np.float64).reshape(-1)
    kinds = np.asarray(kinds, dtype=np.int64).reshape(-1)
    n = len(dirs)
    k = len(centers)
    t_obj = np.full((n, k), np.inf)
    c_obj = np.zeros((n, k))
    cub = np.flatnonzero(kinds == KIND_CUBOID)
    cyl = np.flatnonzero(kinds == KIND_CYLINDER)
    if len(cub):
        t, c = _cuboid_hits(dirs, centers[cub], halves[cub], cos_yaw[cub], sin_yaw[cub])
        t_obj[:, cub], c_obj[:, cub] = t, c
    if len(cyl):
        t, c = _cylinder_hits(dirs, centers[cyl], halves[cyl])
        t_obj[:, cyl], c_obj[:, cyl] = t, c
    t_obj[t_obj > max_range] = np.inf

    t_best = np.full(n, np.inf)
    hit = np.full(n, HIT_NONE, dtype=np.int64)
    cos_inc = np.zeros(n)
    if k:
        j = np.argmin(t_obj, axis=1)
        rows = np.arange(n)
        tj = t_obj[rows, j]
        has = np.isfinite(tj)
        t_best = np.where(has, tj, np.inf)
        hit = np.where(has, j, HIT_NONE)
        cos_inc = np.where(has, c_obj[rows, j], 0.0)

    dz = dirs[:, 2]
    down = dz < 0.0
    tg = ground_z / np.where(down, dz, -1.0)
    g = down & (tg > 0.0) & (tg <= max_range) & (tg < t_best)
    t_best = np.where(g, tg, t_best)
    hit = np.where(g, HIT_GROUND, hit)
    cos_inc = np.where(g, np.abs(dz), cos_inc)
    return t_best, hit, np.minimum(cos_inc, 1.0)


def featurize_cells(xyz, feats, x_min, y_min, cell, height, width):
    """Per-cell (count, mean z, max z, mean range, mean of each extra feature)."""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2:
        feats = feats.reshape(len(xyz), -1)
    d = feats.shape[1]
    out = np.zeros((height, width, 4 + d))
    if len(xyz) == 0:
        return out
    x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    fx = np.floor((x - x_min) / cell)
    fy = np.floor((y - y_min) / cell)
    keep = (fx >= 0) & (fx < width) & (fy >= 0) & (fy < height)
    if not np.any(keep):
        return out
    ix = fx[keep].astype(np.int64)
    iy = fy[keep].astype(np.int64)
    flat = iy * width + ix
    n_cells = height * width
    xk, yk, zk = x[keep], y[keep], z[keep]
    rng = np.sqrt(xk * xk + yk * yk + zk * zk)
    count = np.bincount(flat, minlength=n_cells).astype(np.float64)
    occ = count > 0
    denom = np.where(occ, count, 1.0)
    res = out.reshape(n_cells, 4 + d)
    res[:, 0] = count
    res[:, 1] = np.bincount(flat, weights=zk, minlength=n_cells) / denom
    zmax = np.full(n_cells, -np.inf)
    np.maximum.at(zmax, flat, zk)
    res[:, 2] = np.where(occ, zmax, 0.0)
    res[:, 3] = np.bincount(flat, weights=rng, minlength=n_cells) / denom
    fk = feats[keep]
    for j in range(d):
        res[:, 4 + j] = np.bincount(flat, weights=fk[:, j], minlength=n_cells) / denom
    return out
