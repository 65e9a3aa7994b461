# cython: language_level=3
"""Compiled twins of the kernels in ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, ceil, floor, fabs, INFINITY

cnp.import_array()


def accumulate(field, double sigma, double p_floor, double radius, double scale, int out_size):
    cdef double[:, :, ::1] f = np.ascontiguousarray(field, dtype=np.float64)
    H_arr = np.zeros((out_size, out_size), dtype=np.float64)
    cdef double[:, ::1] H = H_arr
    cdef Py_ssize_t G_rows = f.shape[1], G_cols = f.shape[2]
    cdef Py_ssize_t i, j, u, v
    cdef int u0, u1, v0, v1
    cdef double p, mx, my, gyv
    cdef double inv2s2 = 1.0 / (2.0 * sigma * sigma)
    cdef int width = <int>(2 * radius + 3)
    gx_arr = np.empty(width, dtype=np.float64)
    gy_arr = np.empty(width, dtype=np.float64)
    cdef double[::1] gx = gx_arr
    cdef double[::1] gy = gy_arr

    for j in range(G_rows):
        for i in range(G_cols):
            p = f[2, j, i]
            if not (p > p_floor):
                continue
            mx = scale * (i + f[0, j, i])
            my = scale * (j + f[1, j, i])
            u0 = <int>ceil(mx - radius)
            u1 = <int>floor(mx + radius)
            v0 = <int>ceil(my - radius)
            v1 = <int>floor(my + radius)
            if u0 < 0:
                u0 = 0
            if v0 < 0:
                v0 = 0
            if u1 > out_size - 1:
                u1 = out_size - 1
            if v1 > out_size - 1:
                v1 = out_size - 1
            if u0 > u1 or v0 > v1:
                continue
            for u in range(u0, u1 + 1):
                gx[u - u0] = exp(-(u - mx) * (u - mx) * inv2s2)
            for v in range(v0, v1 + 1):
                gy[v - v0] = exp(-(v - my) * (v - my) * inv2s2)
            for v in range(v0, v1 + 1):
                gyv = p * gy[v - v0]
                for u in range(u0, u1 + 1):
                    H[v, u] += gyv * gx[u - u0]
    return H_arr


def local_maxima(H_in, double threshold, int half):
    cdef double[:, ::1] H = np.ascontiguousarray(H_in, dtype=np.float64)
    cdef Py_ssize_t n_rows = H.shape[0], n_cols = H.shape[1]
    cdef Py_ssize_t y, x, yy, xx
    cdef double h, o
    cdef bint ok
    out = []
    for y in range(n_rows):
        for x in range(n_cols):
            h = H[y, x]
            if not (h >= threshold):
                continue
            ok = True
            for yy in range(y - half, y + half + 1):
                if yy < 0 or yy >= n_rows:
                    continue
                for xx in range(x - half, x + half + 1):
                    if xx < 0 or xx >= n_cols or (yy == y and xx == x):
                        continue
                    o = H[yy, xx]
                    if yy < y or (yy == y and xx < x):
                        if not (o < h):
                            ok = False
                            break
                    elif o > h:
                        ok = False
                        break
                if not ok:
                    break
            if ok:
                out.append(y * n_cols + x)
    return np.asarray(out, dtype=np.int64)


def rasterize(positions, double radius, int size):
    cdef double[:, ::1] pos = np.ascontiguousarray(
        np.asarray(positions, dtype=np.float64).reshape(-1, 2))
    M_arr = np.zeros((size, size), dtype=np.uint8)
    cdef unsigned char[:, ::1] M = M_arr
    cdef Py_ssize_t a, u, v
    cdef int u0, u1, v0, v1
    cdef double x, y
    for a in range(pos.shape[0]):
        x = pos[a, 0]
        y = pos[a, 1]
        u0 = <int>ceil(x - radius)
        u1 = <int>floor(x + radius)
        v0 = <int>ceil(y - radius)
        v1 = <int>floor(y + radius)
        if u0 < 0:
            u0 = 0
        if v0 < 0:
            v0 = 0
        if u1 > size - 1:
            u1 = size - 1
        if v1 > size - 1:
            v1 = size - 1
        for v in range(v0, v1 + 1):
            for u in range(u0, u1 + 1):
                if fabs(u - x) + fabs(v - y) <= radius:
                    M[v, u] = 1
    return M_arr


def assign_vicinity(grid_positions, int d0, int size):
    cdef double[:, ::1] pos = np.ascontiguousarray(
        np.asarray(grid_positions, dtype=np.float64).reshape(-1, 2))
    owner_arr = np.full((size, size), -1, dtype=np.int32)
    best_arr = np.full((size, size), INFINITY, dtype=np.float64)
    cdef int[:, ::1] owner = owner_arr
    cdef double[:, ::1] best = best_arr
    cdef Py_ssize_t a
    cdef int ci, cj, i, j
    cdef double x, y, d
    for a in range(pos.shape[0]):
        x = pos[a, 0]
        y = pos[a, 1]
        ci = <int>floor(x)
        cj = <int>floor(y)
        for j in range(cj - d0, cj + d0 + 1):
            if j < 0 or j >= size:
                continue
            for i in range(ci - d0, ci + d0 + 1):
                if i < 0 or i >= size:
                    continue
                if abs(i - ci) + abs(j - cj) > d0:
                    continue
                d = (j - y) * (j - y) + (i - x) * (i - x)
                if d < best[j, i]:
                    best[j, i] = d
                    owner[j, i] = <int>a
    return owner_arr
