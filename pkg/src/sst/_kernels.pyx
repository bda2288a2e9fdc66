# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for rasterization, label remapping and counting."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def fill_capsule(cnp.uint8_t[:, ::1] out, long ax, long ay, long bx, long by,
                 long radius, int value, long row_min, long row_max):
    """Paint pixels within ``radius`` of segment a-b, restricted to rows
    ``row_min..row_max`` inclusive. All arithmetic is integer."""
    cdef Py_ssize_t H = out.shape[0], W = out.shape[1]
    cdef long x, y, px, py, ex, ey, t, len2, cross, d2, r2 = radius * radius
    cdef long x0 = min(ax, bx) - radius, x1 = max(ax, bx) + radius
    cdef long y0 = min(ay, by) - radius, y1 = max(ay, by) + radius
    ex = bx - ax
    ey = by - ay
    len2 = ex * ex + ey * ey
    y0 = max(y0, max(row_min, 0))
    y1 = min(y1, min(row_max, H - 1))
    x0 = max(x0, 0)
    x1 = min(x1, W - 1)
    for y in range(y0, y1 + 1):
        for x in range(x0, x1 + 1):
            px = x - ax
            py = y - ay
            t = px * ex + py * ey
            if len2 == 0 or t <= 0:
                d2 = px * px + py * py
                if d2 <= r2:
                    out[y, x] = value
            elif t >= len2:
                d2 = (x - bx) * (x - bx) + (y - by) * (y - by)
                if d2 <= r2:
                    out[y, x] = value
            else:
                cross = px * ey - py * ex
                if cross * cross <= r2 * len2:
                    out[y, x] = value


def remap(const cnp.uint8_t[:, ::1] labels, const cnp.int64_t[::1] lut, int ignore):
    """Apply ``lut`` pointwise; ``ignore`` passes through unchanged.

    Returns ``(out, bad_row, bad_col)`` with ``bad_row == -1`` on success.
    """
    cdef Py_ssize_t H = labels.shape[0], W = labels.shape[1], n = lut.shape[0]
    cdef Py_ssize_t i, j
    cdef int v
    out_arr = np.empty((H, W), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] out = out_arr
    for i in range(H):
        for j in range(W):
            v = labels[i, j]
            if v == ignore:
                out[i, j] = <cnp.uint8_t>ignore
            elif v >= n:
                return out_arr, i, j
            else:
                out[i, j] = <cnp.uint8_t>lut[v]
    return out_arr, -1, -1


def adjacency(const cnp.uint8_t[:, ::1] labels, int Z, int ignore):
    """Z x Z 0/1 matrix marking label pairs that meet across a 4-neighbour edge."""
    cdef Py_ssize_t H = labels.shape[0], W = labels.shape[1], i, j
    cdef int a, b
    adj_arr = np.zeros((Z, Z), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] adj = adj_arr
    for i in range(H):
        for j in range(W):
            a = labels[i, j]
            if a == ignore or a >= Z:
                continue
            if j + 1 < W:
                b = labels[i, j + 1]
                if b != ignore and b < Z:
                    adj[a, b] = 1
                    adj[b, a] = 1
            if i + 1 < H:
                b = labels[i + 1, j]
                if b != ignore and b < Z:
                    adj[a, b] = 1
                    adj[b, a] = 1
    return adj_arr


def confusion(const cnp.int64_t[::1] gt, const cnp.int64_t[::1] pred, int Z, long ignore):
    """Accumulate a Z x Z confusion matrix over flat rasters.

    Returns ``(cm, bad_index)`` with ``bad_index == -1`` on success.
    """
    cdef Py_ssize_t n = gt.shape[0], k
    cdef long g, p
    cm_arr = np.zeros((Z, Z), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] cm = cm_arr
    for k in range(n):
        g = gt[k]
        if g == ignore:
            continue
        p = pred[k]
        if g < 0 or g >= Z or p < 0 or p >= Z:
            return cm_arr, k
        cm[g, p] += 1
    return cm_arr, -1
