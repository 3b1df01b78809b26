# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops; see ``_pykernels`` for the reference semantics."""
from libc.math cimport sqrt, hypot, INFINITY, NAN


def nearest_segment(const double[:, ::1] xy, double px, double py):
    cdef Py_ssize_t n = xy.shape[0]
    cdef Py_ssize_t i, best_i = -1
    cdef double x0, y0, dx, dy, len2, t, qx, qy, d
    cdef double best_d = INFINITY, best_t = 0.0, best_qx = NAN, best_qy = NAN
    for i in range(n - 1):
        x0 = xy[i, 0]
        y0 = xy[i, 1]
        dx = xy[i + 1, 0] - x0
        dy = xy[i + 1, 1] - y0
        len2 = dx * dx + dy * dy
        if len2 > 0.0:
            t = ((px - x0) * dx + (py - y0) * dy) / len2
        else:
            t = 0.0
        if t <= 0.0:
            t = 0.0
            qx = x0
            qy = y0
        elif t >= 1.0:
            t = 1.0
            qx = xy[i + 1, 0]
            qy = xy[i + 1, 1]
        else:
            qx = x0 + t * dx
            qy = y0 + t * dy
        d = hypot(px - qx, py - qy)
        if d < best_d:
            best_d = d
            best_i = i
            best_t = t
            best_qx = qx
            best_qy = qy
    return best_i, best_t, best_d, best_qx, best_qy


def best_split(const double[::1] x, const double[::1] y, Py_ssize_t min_leaf):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t k, best_k = -1
    cdef double total = 0.0, total_sq = 0.0
    cdef double left = 0.0, left_sq = 0.0, right, right_sq
    cdef double mean, var, sd_all, sd_l, sd_r, sdr
    cdef double best = -INFINITY
    cdef double fn = <double>n
    cdef double a, b, thr
    if n < 2 * min_leaf or min_leaf < 1:
        return best, NAN, -1
    for k in range(n):
        total = total + y[k]
        total_sq = total_sq + y[k] * y[k]
    mean = total / fn
    var = total_sq / fn - mean * mean
    sd_all = sqrt(var) if var > 0.0 else 0.0
    for k in range(1, n - min_leaf + 1):
        left = left + y[k - 1]
        left_sq = left_sq + y[k - 1] * y[k - 1]
        if k < min_leaf or not (x[k - 1] < x[k]):
            continue
        mean = left / <double>k
        var = left_sq / <double>k - mean * mean
        sd_l = sqrt(var) if var > 0.0 else 0.0
        right = total - left
        right_sq = total_sq - left_sq
        mean = right / <double>(n - k)
        var = right_sq / <double>(n - k) - mean * mean
        sd_r = sqrt(var) if var > 0.0 else 0.0
        sdr = sd_all - (<double>k / fn) * sd_l - (<double>(n - k) / fn) * sd_r
        if sdr > best:
            best = sdr
            best_k = k
    if best_k < 0:
        return best, NAN, -1
    a = x[best_k - 1]
    b = x[best_k]
    thr = a + (b - a) / 2.0
    if not (thr > a):
        thr = b
    return best, thr, best_k
