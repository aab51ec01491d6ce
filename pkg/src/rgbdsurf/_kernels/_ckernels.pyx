# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled marching-cubes and triangle voxelisation kernels.

Same contracts as the numpy versions in ``_pykernels``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, floor

from .tables import CORNERS, EDGE_AXIS, EDGE_BASE, N_TRIS, TRI_TABLE

cnp.import_array()


def mc_triangles(values, double iso=0.0):
    cdef double[:, :, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef long[:, ::1] table = np.ascontiguousarray(TRI_TABLE, dtype=np.int64)
    cdef long[::1] ntri = np.ascontiguousarray(N_TRIS, dtype=np.int64)
    cdef long[:, ::1] corners = np.ascontiguousarray(CORNERS, dtype=np.int64)
    cdef long[:, ::1] ebase = np.ascontiguousarray(EDGE_BASE, dtype=np.int64)
    cdef long[::1] eaxis = np.ascontiguousarray(EDGE_AXIS, dtype=np.int64)
    cdef Py_ssize_t nx = v.shape[0], ny = v.shape[1], nz = v.shape[2]
    cdef Py_ssize_t i, j, k, c, t, q, count = 0, cap = 1024
    cdef long case, e
    out_arr = np.empty((cap, 3), dtype=np.int64)
    cdef long[:, ::1] out = out_arr
    for i in range(nx - 1):
        for j in range(ny - 1):
            for k in range(nz - 1):
                case = 0
                for c in range(8):
                    if v[i + corners[c, 0], j + corners[c, 1], k + corners[c, 2]] < iso:
                        case |= (1 << c)
                if ntri[case] == 0:
                    continue
                if count + ntri[case] > cap:
                    cap *= 2
                    bigger = np.empty((cap, 3), dtype=np.int64)
                    bigger[:count] = out_arr[:count]
                    out_arr = bigger
                    out = out_arr
                for t in range(ntri[case]):
                    for q in range(3):
                        e = table[case, 3 * t + q]
                        out[count, q] = (((i + ebase[e, 0]) * ny + (j + ebase[e, 1])) * nz
                                         + (k + ebase[e, 2])) * 3 + eaxis[e]
                    count += 1
    return out_arr[:count].copy()


cdef inline void _cross(double* a, double* b, double* o) nogil:
    o[0] = a[1] * b[2] - a[2] * b[1]
    o[1] = a[2] * b[0] - a[0] * b[2]
    o[2] = a[0] * b[1] - a[1] * b[0]


cdef inline bint _axis_separates(double* ax, double v[3][3], double h, double eps) nogil:
    cdef double p0 = ax[0] * v[0][0] + ax[1] * v[0][1] + ax[2] * v[0][2]
    cdef double p1 = ax[0] * v[1][0] + ax[1] * v[1][1] + ax[2] * v[1][2]
    cdef double p2 = ax[0] * v[2][0] + ax[1] * v[2][1] + ax[2] * v[2][2]
    cdef double s = fabs(ax[0]) + fabs(ax[1]) + fabs(ax[2])
    cdef double r = h * s
    cdef double mn = min(p0, min(p1, p2))
    cdef double mx = max(p0, max(p1, p2))
    return mn > r + eps * s or mx < -r - eps * s


cdef bint _overlap(double cx, double cy, double cz, double h, double[:, :] tri, double eps) nogil:
    cdef double v[3][3]
    cdef double e[3][3]
    cdef double ax[3]
    cdef double unit[3]
    cdef int a, b
    for a in range(3):
        v[a][0] = tri[a, 0] - cx
        v[a][1] = tri[a, 1] - cy
        v[a][2] = tri[a, 2] - cz
    for b in range(3):
        if (min(v[0][b], min(v[1][b], v[2][b])) > h + eps
                or max(v[0][b], max(v[1][b], v[2][b])) < -h - eps):
            return False
    for b in range(3):
        e[0][b] = v[1][b] - v[0][b]
        e[1][b] = v[2][b] - v[1][b]
        e[2][b] = v[0][b] - v[2][b]
    _cross(e[0], e[1], ax)
    cdef double s = fabs(ax[0]) + fabs(ax[1]) + fabs(ax[2])
    cdef double d = ax[0] * v[0][0] + ax[1] * v[0][1] + ax[2] * v[0][2]
    if fabs(d) > h * s + eps * s:
        return False
    for a in range(3):
        for b in range(3):
            unit[0] = 0.0
            unit[1] = 0.0
            unit[2] = 0.0
            unit[b] = 1.0
            _cross(unit, e[a], ax)
            if _axis_separates(ax, v, h, eps):
                return False
    return True


def voxelize_triangles(tris, origin, double voxel, dims, double eps=1e-9):
    cdef double[:, :, ::1] T = np.ascontiguousarray(np.asarray(tris, dtype=np.float64).reshape(-1, 3, 3))
    cdef double[::1] o = np.ascontiguousarray(origin, dtype=np.float64)
    cdef long[::1] d = np.ascontiguousarray(dims, dtype=np.int64)
    occ_arr = np.zeros((d[0], d[1], d[2]), dtype=np.uint8)
    cdef unsigned char[:, :, ::1] occ = occ_arr
    cdef Py_ssize_t n, a, b
    cdef long lo[3]
    cdef long hi[3]
    cdef long i, j, k
    cdef double mn, mx, h = voxel / 2
    with nogil:
        for n in range(T.shape[0]):
            for b in range(3):
                mn = min(T[n, 0, b], min(T[n, 1, b], T[n, 2, b]))
                mx = max(T[n, 0, b], max(T[n, 1, b], T[n, 2, b]))
                lo[b] = <long>floor((mn - o[b] - eps) / voxel)
                hi[b] = <long>floor((mx - o[b] + eps) / voxel)
                if lo[b] < 0:
                    lo[b] = 0
                if hi[b] > d[b] - 1:
                    hi[b] = d[b] - 1
                if lo[b] > d[b] - 1:
                    lo[b] = d[b] - 1
                if hi[b] < 0:
                    hi[b] = 0
            for i in range(lo[0], hi[0] + 1):
                for j in range(lo[1], hi[1] + 1):
                    for k in range(lo[2], hi[2] + 1):
                        if occ[i, j, k]:
                            continue
                        if _overlap(o[0] + (i + 0.5) * voxel, o[1] + (j + 0.5) * voxel,
                                    o[2] + (k + 0.5) * voxel, h, T[n], eps):
                            occ[i, j, k] = 1
    return occ_arr
