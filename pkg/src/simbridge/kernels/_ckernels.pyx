# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled ray casting and pillar aggregation.

Loop bodies mirror ``_pykernels`` expression by expression; keep them in sync.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, floor, fabs, INFINITY

cnp.import_array()

DEF HIT_GROUND = -1
DEF HIT_NONE = -2
DEF PARALLEL_EPS = 1e-15


cdef inline bint _slab(double lo, double ld, double h, double *tmin, double *tmax) nogil:
    cdef double t1, t2
    if fabs(ld) < PARALLEL_EPS:
        tmin[0] = -INFINITY
        tmax[0] = INFINITY
        return fabs(lo) > h
    t1 = (-h - lo) / ld
    t2 = (h - lo) / ld
    if t1 < t2:
        tmin[0] = t1
        tmax[0] = t2
    else:
        tmin[0] = t2
        tmax[0] = t1
    return False


def raycast(dirs, centers, halves, cos_yaw, sin_yaw, kinds, double ground_z, double max_range):
    cdef const double[:, ::1] d = np.ascontiguousarray(dirs, dtype=np.float64)
    cdef const double[:, ::1] c = np.ascontiguousarray(centers, dtype=np.float64).reshape(-1, 3)
    cdef const double[:, ::1] hf = np.ascontiguousarray(halves, dtype=np.float64).reshape(-1, 3)
    cdef const double[::1] cy = np.ascontiguousarray(cos_yaw, dtype=np.float64).reshape(-1)
    cdef const double[::1] sy = np.ascontiguousarray(sin_yaw, dtype=np.float64).reshape(-1)
    cdef const long long[::1] kd = np.ascontiguousarray(kinds, dtype=np.int64).reshape(-1)
    cdef Py_ssize_t n = d.shape[0], k = c.shape[0], i, j, axis
    t_out = np.empty(n, dtype=np.float64)
    h_out = np.empty(n, dtype=np.int64)
    c_out = np.empty(n, dtype=np.float64)
    cdef double[::1] to = t_out
    cdef long long[::1] ho = h_out
    cdef double[::1] co = c_out
    cdef double dx, dy, dz, best, bcos, t, cosi, ox, oy, oz
    cdef double lox, loy, loz, ldx, ldy, ldz, tx0, tx1, ty0, ty1, tz0, tz1, tnear, tfar
    cdef double cx, cyy, cz, rad, zlo, zhi, a, b, cc, disc, ts, zs, tc, px, py, zc, tg
    cdef long long hit
    cdef bint mx, my, mz
    cdef int cap
    with nogil:
        for i in range(n):
            dx = d[i, 0]
            dy = d[i, 1]
            dz = d[i, 2]
            best = INFINITY
            bcos = 0.0
            hit = HIT_NONE
            for j in range(k):
                t = INFINITY
                cosi = 0.0
                if kd[j] == 0:
                    ox = -c[j, 0]
                    oy = -c[j, 1]
                    oz = -c[j, 2]
                    lox = cy[j] * ox + sy[j] * oy
                    loy = cy[j] * oy - sy[j] * ox
                    loz = oz
                    ldx = cy[j] * dx + sy[j] * dy
                    ldy = cy[j] * dy - sy[j] * dx
                    ldz = dz
                    mx = _slab(lox, ldx, hf[j, 0], &tx0, &tx1)
                    my = _slab(loy, ldy, hf[j, 1], &ty0, &ty1)
                    mz = _slab(loz, ldz, hf[j, 2], &tz0, &tz1)
                    tnear = tx0
                    axis = 0
                    if ty0 > tnear:
                        tnear = ty0
                        axis = 1
                    if tz0 > tnear:
                        tnear = tz0
                        axis = 2
                    tfar = tx1
                    if ty1 < tfar:
                        tfar = ty1
                    if tz1 < tfar:
                        tfar = tz1
                    if tnear <= tfar and tnear > 0.0 and not (mx or my or mz):
                        t = tnear
                        if axis == 0:
                            cosi = fabs(ldx)
                        elif axis == 1:
                            cosi = fabs(ldy)
                        else:
                            cosi = fabs(ldz)
                else:
                    cx = c[j, 0]
                    cyy = c[j, 1]
                    cz = c[j, 2]
                    rad = hf[j, 0]
                    zlo = cz - hf[j, 2]
                    zhi = cz + hf[j, 2]
                    ox = -cx
                    oy = -cyy
                    a = dx * dx + dy * dy
                    b = 2.0 * (ox * dx + oy * dy)
                    cc = ox * ox + oy * oy - rad * rad
                    disc = b * b - 4.0 * a * cc
                    if a > PARALLEL_EPS and disc >= 0.0:
                        ts = (-b - sqrt(disc)) / (2.0 * a)
                        zs = ts * dz
                        if ts > 0.0 and zs >= zlo and zs <= zhi:
                            t = ts
                            cosi = fabs((ts * dx - cx) * dx + (ts * dy - cyy) * dy) / rad
                    if dz != 0.0:
                        for cap in range(2):
                            zc = zhi if cap == 0 else zlo
                            tc = zc / dz
                            px = tc * dx - cx
                            py = tc * dy - cyy
                            if tc > 0.0 and tc < t and px * px + py * py <= rad * rad:
                                t = tc
                                cosi = fabs(dz)
                if t <= max_range and t < best:
                    best = t
                    bcos = cosi
                    hit = j
            if dz < 0.0:
                tg = ground_z / dz
                if tg > 0.0 and tg <= max_range and tg < best:
                    best = tg
                    bcos = fabs(dz)
                    hit = HIT_GROUND
            to[i] = best
            ho[i] = hit
            co[i] = bcos if bcos < 1.0 else 1.0
    return t_out, h_out, c_out


def featurize_cells(xyz, feats, double x_min, double y_min, double cell, int height, int width):
    cdef const double[:, ::1] p = np.ascontiguousarray(xyz, dtype=np.float64).reshape(-1, 3)
    cdef Py_ssize_t n = p.shape[0]
    fa = np.ascontiguousarray(feats, dtype=np.float64)
    if fa.ndim != 2:
        fa = fa.reshape(n, -1)
    cdef const double[:, ::1] f = fa
    cdef Py_ssize_t nd = f.shape[1], i, j, ix, iy
    out_arr = np.zeros((height, width, 4 + nd), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef double x, y, z, fx, fy, cnt
    with nogil:
        for i in range(n):
            x = p[i, 0]
            y = p[i, 1]
            z = p[i, 2]
            fx = floor((x - x_min) / cell)
            fy = floor((y - y_min) / cell)
            if not (fx >= 0 and fx < width and fy >= 0 and fy < height):
                continue
            ix = <Py_ssize_t>fx
            iy = <Py_ssize_t>fy
            if out[iy, ix, 0] == 0.0 or z > out[iy, ix, 2]:
                out[iy, ix, 2] = z
            out[iy, ix, 0] += 1.0
            out[iy, ix, 1] += z
            out[iy, ix, 3] += sqrt(x * x + y * y + z * z)
            for j in range(nd):
                out[iy, ix, 4 + j] += f[i, j]
        for iy in range(height):
            for ix in range(width):
                cnt = out[iy, ix, 0]
                if cnt > 0:
                    out[iy, ix, 1] = out[iy, ix, 1] / cnt
                    out[iy, ix, 3] = out[iy, ix, 3] / cnt
                    for j in range(nd):
                        out[iy, ix, 4 + j] = out[iy, ix, 4 + j] / cnt
    return out_arr
