# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: nearest-neighbour scans and splat compositing.

Every function here has a numpy twin in ``_pykernels`` with the same
signature and the same accumulation order.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, floor, ceil

cnp.import_array()


def nearest_sqdist(const double[:, ::1] a, const double[:, ::1] b):
    """For each row of ``a``: squared distance to, and index of, the nearest row of ``b``."""
    cdef Py_ssize_t na = a.shape[0], nb = b.shape[0], i, j
    cdef double dx, dy, dz, d2, best
    cdef Py_ssize_t arg
    out_d = np.empty(na, dtype=np.float64)
    out_i = np.empty(na, dtype=np.int64)
    cdef double[::1] od = out_d
    cdef long long[::1] oi = out_i
    with nogil:
        for i in range(na):
            best = 0.0
            arg = -1
            for j in range(nb):
                dx = a[i, 0] - b[j, 0]
                dy = a[i, 1] - b[j, 1]
                dz = a[i, 2] - b[j, 2]
                d2 = dx * dx + dy * dy + dz * dz
                if arg < 0 or d2 < best:
                    best = d2
                    arg = j
            od[i] = best
            oi[i] = arg
    return out_d, out_i


cdef double _one_way(const double[:, ::1] a, const double[:, ::1] b) noexcept nogil:
    cdef Py_ssize_t na = a.shape[0], nb = b.shape[0], i, j
    cdef double dx, dy, dz, d2, best, acc = 0.0
    for i in range(na):
        best = 0.0
        for j in range(nb):
            dx = a[i, 0] - b[j, 0]
            dy = a[i, 1] - b[j, 1]
            dz = a[i, 2] - b[j, 2]
            d2 = dx * dx + dy * dy + dz * dz
            if j == 0 or d2 < best:
                best = d2
        acc += best
    return acc / na


def chamfer(const double[:, ::1] a, const double[:, ::1] b):
    cdef double fwd, bwd
    with nogil:
        fwd = _one_way(a, b)
        bwd = _one_way(b, a)
    return 0.5 * (fwd + bwd)


def composite(const double[::1] u, const double[::1] v, const double[::1] z,
              const double[::1] radius, const double[::1] opacity,
              const double[:, ::1] color, Py_ssize_t width, Py_ssize_t row0,
              Py_ssize_t row1):
    """Back-to-front "over" compositing of isotropic splats into rows [row0, row1).

    Splats must already be sorted far-to-near. Returns premultiplied colour,
    accumulated alpha and alpha-weighted depth for the row block.
    """
    cdef Py_ssize_t n = u.shape[0], rows = row1 - row0, s, x, y, x0, x1, y0, y1, c
    cdef double r, inv2r2, a, dxp, dyp, keep
    rgb_np = np.zeros((rows, width, 3), dtype=np.float64)
    alpha_np = np.zeros((rows, width), dtype=np.float64)
    depth_np = np.zeros((rows, width), dtype=np.float64)
    cdef double[:, :, ::1] rgb = rgb_np
    cdef double[:, ::1] alpha = alpha_np
    cdef double[:, ::1] depth = depth_np
    with nogil:
        for s in range(n):
            r = radius[s]
            inv2r2 = 0.5 / (r * r)
            x0 = <Py_ssize_t>ceil(u[s] - 3.0 * r)
            x1 = <Py_ssize_t>floor(u[s] + 3.0 * r)
            y0 = <Py_ssize_t>ceil(v[s] - 3.0 * r)
            y1 = <Py_ssize_t>floor(v[s] + 3.0 * r)
            if x0 < 0:
                x0 = 0
            if x1 > width - 1:
                x1 = width - 1
            if y0 < row0:
                y0 = row0
            if y1 > row1 - 1:
                y1 = row1 - 1
            for y in range(y0, y1 + 1):
                dyp = y - v[s]
                for x in range(x0, x1 + 1):
                    dxp = x - u[s]
                    a = opacity[s] * exp(-(dxp * dxp + dyp * dyp) * inv2r2)
                    keep = 1.0 - a
                    for c in range(3):
                        rgb[y - row0, x, c] = a * color[s, c] + keep * rgb[y - row0, x, c]
                    alpha[y - row0, x] = a + keep * alpha[y - row0, x]
                    depth[y - row0, x] = a * z[s] + keep * depth[y - row0, x]
    return rgb_np, alpha_np, depth_np
