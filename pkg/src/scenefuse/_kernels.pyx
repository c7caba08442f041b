# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: Hungarian assignment and rotated-rectangle IoU.

Same algorithms, same tie-breaking and same operation order as
``_kernels_py``; results agree to the last bit on well-conditioned input.
"""
from libc.math cimport cos, sin, hypot, fabs, INFINITY

import numpy as np


def hungarian(cost):
    cdef double[:, ::1] a = np.ascontiguousarray(cost, dtype=np.float64)
    cdef Py_ssize_t n = a.shape[0]
    if n == 0:
        return []
    cdef Py_ssize_t m = a.shape[1]
    if n > m:
        raise ValueError("hungarian expects rows <= cols")
    cdef double[::1] u = np.zeros(n + 1)
    cdef double[::1] v = np.zeros(m + 1)
    cdef Py_ssize_t[::1] p = np.zeros(m + 1, dtype=np.intp)
    cdef Py_ssize_t[::1] way = np.zeros(m + 1, dtype=np.intp)
    cdef double[::1] minv = np.empty(m + 1)
    cdef char[::1] used = np.zeros(m + 1, dtype=np.int8)
    cdef Py_ssize_t i, j, j0, j1, i0
    cdef double delta, cur, ui0
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(m + 1):
            minv[j] = INFINITY
            used[j] = 0
        while True:
            used[j0] = 1
            i0 = p[j0]
            ui0 = u[i0]
            delta = INFINITY
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = a[i0 - 1, j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    assign = [-1] * n
    for j in range(1, m + 1):
        if p[j]:
            assign[p[j] - 1] = j - 1
    return assign


cdef void _corners(double cx, double cy, double length, double width, double yaw,
                   double* xs, double* ys) noexcept nogil:
    cdef double c = cos(yaw)
    cdef double s = sin(yaw)
    cdef double hl = 0.5 * length
    cdef double hw = 0.5 * width
    cdef double dxs[4]
    cdef double dys[4]
    dxs[0] = hl; dys[0] = hw
    dxs[1] = -hl; dys[1] = hw
    dxs[2] = -hl; dys[2] = -hw
    dxs[3] = hl; dys[3] = -hw
    cdef int k
    for k in range(4):
        xs[k] = cx + c * dxs[k] - s * dys[k]
        ys[k] = cy + s * dxs[k] + c * dys[k]


cdef double _rect_iou(double ax, double ay, double al, double aw, double ayaw,
                      double bx, double by, double bl, double bw, double byaw) noexcept nogil:
    # a convex 4-gon clipped by a convex 4-gon has at most 8 vertices
    cdef double sx[16]
    cdef double sy[16]
    cdef double tx[16]
    cdef double ty[16]
    cdef double cxs[4]
    cdef double cys[4]
    cdef int ns = 4, nt, k, q
    cdef double ex, ey, axk, ayk, px, py, qx, qy, dp, ds, t, acc
    _corners(ax, ay, al, aw, ayaw, sx, sy)
    _corners(bx, by, bl, bw, byaw, cxs, cys)
    for k in range(4):
        if ns == 0:
            break
        axk = cxs[k]
        ayk = cys[k]
        ex = cxs[(k + 1) % 4] - axk
        ey = cys[(k + 1) % 4] - ayk
        nt = 0
        for q in range(ns):
            px = sx[q]
            py = sy[q]
            qx = sx[(q - 1 + ns) % ns]
            qy = sy[(q - 1 + ns) % ns]
            dp = ex * (py - ayk) - ey * (px - axk)
            ds = ex * (qy - ayk) - ey * (qx - axk)
            if dp >= 0.0:
                if ds < 0.0:
                    t = ds / (ds - dp)
                    tx[nt] = qx + t * (px - qx)
                    ty[nt] = qy + t * (py - qy)
                    nt += 1
                tx[nt] = px
                ty[nt] = py
                nt += 1
            elif ds >= 0.0:
                t = ds / (ds - dp)
                tx[nt] = qx + t * (px - qx)
                ty[nt] = qy + t * (py - qy)
                nt += 1
        ns = nt
        for q in range(ns):
            sx[q] = tx[q]
            sy[q] = ty[q]
    acc = 0.0
    if ns >= 3:
        for q in range(ns):
            acc += sx[q] * sy[(q + 1) % ns] - sx[(q + 1) % ns] * sy[q]
    acc = fabs(0.5 * acc)
    cdef double union = al * aw + bl * bw - acc
    if union <= 0.0:
        return 0.0
    t = acc / union
    if t > 1.0:
        return 1.0
    if t < 0.0:
        return 0.0
    return t


def rect_iou(a, b):
    return _rect_iou(a[0], a[1], a[2], a[3], a[4], b[0], b[1], b[2], b[3], b[4])


def rect_iou_matrix(boxes_a, boxes_b):
    cdef double[:, ::1] A = np.ascontiguousarray(boxes_a, dtype=np.float64).reshape(-1, 5)
    cdef double[:, ::1] B = np.ascontiguousarray(boxes_b, dtype=np.float64).reshape(-1, 5)
    cdef Py_ssize_t n = A.shape[0]
    cdef Py_ssize_t m = B.shape[0]
    out = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] O = out
    cdef Py_ssize_t i, j
    cdef double ra, rb
    with nogil:
        for i in range(n):
            ra = hypot(A[i, 2], A[i, 3]) * 0.5
            for j in range(m):
                rb = hypot(B[j, 2], B[j, 3]) * 0.5
                if hypot(A[i, 0] - B[j, 0], A[i, 1] - B[j, 1]) > ra + rb:
                    O[i, j] = 0.0
                else:
                    O[i, j] = _rect_iou(A[i, 0], A[i, 1], A[i, 2], A[i, 3], A[i, 4],
                                        B[j, 0], B[j, 1], B[j, 2], B[j, 3], B[j, 4])
    return out
