# cython: language_level=3
"""Compiled kernels: oblique projection onto built-in sections, 1-D W2.

Same arithmetic as ``_kernels_py``; see that module for the section encoding.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

cdef enum:
    MAXD = 16

cdef int BALL = 0
cdef int RBOX = 1


cdef inline double _clip(double v, double lo, double hi) nogil:
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


cdef double _dist(int kind, const double* c, double radius, const double* half,
                  double corner, const double* x, int d) nogil:
    cdef double acc = 0.0, v, inner, r
    cdef int k
    for k in range(d):
        v = x[k] - c[k]
        if kind == RBOX:
            inner = half[k] - corner
            v = v - _clip(v, -inner, inner)
        acc = acc + v * v
    r = radius if kind == BALL else corner
    v = sqrt(acc) - r
    return v if v > 0.0 else 0.0


cdef void _normal(int kind, const double* c, double radius, const double* half,
                  double corner, const double* x, int d, double* n) nogil:
    cdef double acc = 0.0, v, inner, m, best
    cdef int k, face
    cdef double tmp[MAXD]
    for k in range(d):
        v = x[k] - c[k]
        if kind == RBOX:
            inner = half[k] - corner
            v = v - _clip(v, -inner, inner)
        tmp[k] = v
        acc = acc + v * v
    acc = sqrt(acc)
    if acc > 0.0:
        for k in range(d):
            n[k] = tmp[k] / acc
        return
    for k in range(d):
        n[k] = 0.0
    if kind == BALL:
        n[0] = 1.0
        return
    face = 0
    best = half[0] - abs(x[0] - c[0])
    for k in range(1, d):
        m = half[k] - abs(x[k] - c[k])
        if m < best:
            best = m
            face = k
    n[face] = -1.0 if x[face] - c[face] < 0.0 else 1.0


cdef inline void _direction(const double* n, int d, double cos_a, double sin_a, double* g) nogil:
    cdef int k
    if d == 2:
        g[0] = -(cos_a * n[0] + sin_a * n[1])
        g[1] = -(cos_a * n[1] - sin_a * n[0])
    else:
        for k in range(d):
            g[k] = -n[k]


def section_distance(int kind, center, double radius, half, double corner, X):
    cdef double[:, ::1] xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[::1] cv = np.ascontiguousarray(center, dtype=np.float64)
    cdef double[::1] hv = np.ascontiguousarray(half, dtype=np.float64)
    cdef Py_ssize_t i, n = xv.shape[0]
    cdef int d = xv.shape[1]
    out = np.empty(n)
    cdef double[::1] ov = out
    with nogil:
        for i in range(n):
            ov[i] = _dist(kind, &cv[0], radius, &hv[0], corner, &xv[i, 0], d)
    return out


def project(int kind, center, double radius, half, double corner, double cos_a,
            double sin_a, X, double tol, double max_step, int max_iters):
    pts = np.array(X, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] xv = pts
    cdef double[::1] cv = np.ascontiguousarray(center, dtype=np.float64)
    cdef double[::1] hv = np.ascontiguousarray(half, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0]
    cdef int d = xv.shape[1]
    if d > MAXD:
        raise ValueError("dimension too large for compiled kernel")
    xi = np.zeros(n)
    disp = np.zeros((n, d))
    iters = np.zeros(n, dtype=np.int64)
    status = np.zeros(n, dtype=np.int64)
    cdef double[::1] xiv = xi
    cdef double[:, ::1] dv = disp
    cdef long long[::1] itv = iters
    cdef long long[::1] stv = status
    cdef double nrm[MAXD]
    cdef double g[MAXD]
    cdef double trial[MAXD]
    cdef double d0, dd, s_in, s_out, best_s, best_d, mid, gn, step
    cdef Py_ssize_t i
    cdef int k, it, bracketed, failed
    with nogil:
        for i in range(n):
            it = 0
            while True:
                d0 = _dist(kind, &cv[0], radius, &hv[0], corner, &xv[i, 0], d)
                if d0 <= 0.0:
                    break
                if it >= max_iters:
                    stv[i] = 1
                    break
                _normal(kind, &cv[0], radius, &hv[0], corner, &xv[i, 0], d, nrm)
                _direction(nrm, d, cos_a, sin_a, g)
                gn = 0.0
                for k in range(d):
                    gn = gn + g[k] * g[k]
                gn = sqrt(gn)
                s_in = d0
                s_out = 0.0
                best_s = 0.0
                best_d = d0
                bracketed = 0
                failed = 0
                while True:
                    for k in range(d):
                        trial[k] = xv[i, k] + s_in * g[k]
                    dd = _dist(kind, &cv[0], radius, &hv[0], corner, trial, d)
                    it += 1
                    if dd <= 0.0:
                        bracketed = 1
                        break
                    if dd < best_d:
                        best_d = dd
                        best_s = s_in
                    s_out = s_in
                    s_in = s_in * 2.0
                    if s_in > max_step or it >= max_iters:
                        failed = 1
                        break
                if bracketed:
                    while s_in - s_out > tol and it < max_iters:
                        mid = 0.5 * (s_in + s_out)
                        for k in range(d):
                            trial[k] = xv[i, k] + mid * g[k]
                        dd = _dist(kind, &cv[0], radius, &hv[0], corner, trial, d)
                        it += 1
                        if dd <= 0.0:
                            s_in = mid
                        else:
                            s_out = mid
                    if s_in - s_out > tol:
                        stv[i] = 1
                        break
                    step = s_in
                elif best_s > 0.0:
                    step = best_s
                else:
                    stv[i] = 2
                    break
                for k in range(d):
                    xv[i, k] = xv[i, k] + step * g[k]
                    dv[i, k] = dv[i, k] + step * g[k]
                xiv[i] = xiv[i] + step * gn
            itv[i] = it
    return pts, xi, disp, iters, status


def w2_sq_1d(x, wx, y, wy):
    """Squared 2-Wasserstein distance between weighted atoms on the line (merge walk)."""
    ix = np.argsort(x, kind="stable")
    iy = np.argsort(y, kind="stable")
    cdef double[::1] xs = np.ascontiguousarray(np.asarray(x, dtype=np.float64)[ix])
    cdef double[::1] ys = np.ascontiguousarray(np.asarray(y, dtype=np.float64)[iy])
    cdef double[::1] cx = np.ascontiguousarray(np.cumsum(np.asarray(wx, dtype=np.float64)[ix]))
    cdef double[::1] cy = np.ascontiguousarray(np.cumsum(np.asarray(wy, dtype=np.float64)[iy]))
    cdef Py_ssize_t n = xs.shape[0], m = ys.shape[0], i = 0, j = 0
    cdef double lo = 0.0, hi, diff, cost = 0.0
    cx[n - 1] = 1.0
    cy[m - 1] = 1.0
    with nogil:
        while i < n and j < m:
            hi = cx[i] if cx[i] < cy[j] else cy[j]
            diff = xs[i] - ys[j]
            cost = cost + (hi - lo) * diff * diff
            lo = hi
            if cx[i] <= hi:
                i += 1
            if cy[j] <= hi:
                j += 1
    return cost
