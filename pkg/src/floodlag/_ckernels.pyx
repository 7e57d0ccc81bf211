# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: pixel/polygon clipping and conditional Poisson derivatives.

Both functions mirror ``floodlag._pykernels`` exactly; the pure-Python module
is the reference and the fallback when this extension is not built.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log
from libc.stdlib cimport malloc, free

cnp.import_array()


cdef int _clip_edge(double* xin, double* yin, int n, double* xout, double* yout,
                    int axis, double bound, int keep_above) nogil:
    # One Sutherland-Hodgman pass against an axis-aligned half-plane.
    cdef int i, m = 0
    cdef double xs, ys, xe, ye, vs, ve, t
    cdef bint ins, ine
    if n == 0:
        return 0
    xs = xin[n - 1]
    ys = yin[n - 1]
    for i in range(n):
        xe = xin[i]
        ye = yin[i]
        if axis == 0:
            vs = xs
            ve = xe
        else:
            vs = ys
            ve = ye
        if keep_above:
            ins = vs >= bound
            ine = ve >= bound
        else:
            ins = vs <= bound
            ine = ve <= bound
        if ine:
            if not ins:
                t = (bound - vs) / (ve - vs)
                xout[m] = xs + t * (xe - xs)
                yout[m] = ys + t * (ye - ys)
                m += 1
            xout[m] = xe
            yout[m] = ye
            m += 1
        elif ins:
            t = (bound - vs) / (ve - vs)
            xout[m] = xs + t * (xe - xs)
            yout[m] = ys + t * (ye - ys)
            m += 1
        xs = xe
        ys = ye
    return m


cdef double _clipped_signed_area(double* rx, double* ry, int n,
                                 double xmin, double ymin, double xmax, double ymax,
                                 double* ax, double* ay, double* bx, double* by) nogil:
    cdef int m, i, j
    cdef double area = 0.0
    m = _clip_edge(rx, ry, n, ax, ay, 0, xmin, 1)
    m = _clip_edge(ax, ay, m, bx, by, 0, xmax, 0)
    m = _clip_edge(bx, by, m, ax, ay, 1, ymin, 1)
    m = _clip_edge(ax, ay, m, bx, by, 1, ymax, 0)
    if m < 3:
        return 0.0
    j = m - 1
    for i in range(m):
        area += bx[j] * by[i] - bx[i] * by[j]
        j = i
    return 0.5 * area


def coverage_block(double[:, ::1] verts, long[::1] ring_ptr,
                   double origin_x, double origin_y, double pixel_size,
                   long row0, long row1, long col0, long col1):
    """Coverage fraction of every pixel in rows [row0, row1) x cols [col0, col1).

    ``verts`` holds all ring vertices (open rings, no repeated closing vertex),
    oriented so that exteriors are counter-clockwise and holes clockwise;
    ``ring_ptr`` delimits rings.
    """
    cdef long nr = row1 - row0, nc = col1 - col0
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((max(nr, 0), max(nc, 0)))
    cdef long n_rings = ring_ptr.shape[0] - 1
    cdef long max_n = 0, k, r, c, i, n, lo
    cdef double pix_area = pixel_size * pixel_size
    cdef double xmin, xmax, ymin, ymax, acc
    cdef double *rx
    cdef double *ry
    cdef double *ax
    cdef double *ay
    cdef double *bx
    cdef double *by
    cdef double[:, ::1] ring_bbox = np.empty((max(n_rings, 1), 4))
    if nr <= 0 or nc <= 0:
        return out
    for k in range(n_rings):
        n = ring_ptr[k + 1] - ring_ptr[k]
        if n > max_n:
            max_n = n
        lo = ring_ptr[k]
        ring_bbox[k, 0] = verts[lo, 0]
        ring_bbox[k, 1] = verts[lo, 1]
        ring_bbox[k, 2] = verts[lo, 0]
        ring_bbox[k, 3] = verts[lo, 1]
        for i in range(lo, ring_ptr[k + 1]):
            if verts[i, 0] < ring_bbox[k, 0]:
                ring_bbox[k, 0] = verts[i, 0]
            if verts[i, 1] < ring_bbox[k, 1]:
                ring_bbox[k, 1] = verts[i, 1]
            if verts[i, 0] > ring_bbox[k, 2]:
                ring_bbox[k, 2] = verts[i, 0]
            if verts[i, 1] > ring_bbox[k, 3]:
                ring_bbox[k, 3] = verts[i, 1]
    cdef long cap = 16 * max_n + 16
    rx = <double*> malloc(max_n * sizeof(double))
    ry = <double*> malloc(max_n * sizeof(double))
    ax = <double*> malloc(cap * sizeof(double))
    ay = <double*> malloc(cap * sizeof(double))
    bx = <double*> malloc(cap * sizeof(double))
    by = <double*> malloc(cap * sizeof(double))
    try:
        for k in range(n_rings):
            lo = ring_ptr[k]
            n = ring_ptr[k + 1] - lo
            for i in range(n):
                rx[i] = verts[lo + i, 0]
                ry[i] = verts[lo + i, 1]
            for r in range(nr):
                ymax = origin_y - (row0 + r) * pixel_size
                ymin = ymax - pixel_size
                if ymin >= ring_bbox[k, 3] or ymax <= ring_bbox[k, 1]:
                    continue
                for c in range(nc):
                    xmin = origin_x + (col0 + c) * pixel_size
                    xmax = xmin + pixel_size
                    if xmin >= ring_bbox[k, 2] or xmax <= ring_bbox[k, 0]:
                        continue
                    acc = _clipped_signed_area(rx, ry, n, xmin, ymin, xmax, ymax,
                                               ax, ay, bx, by)
                    out[r, c] += acc / pix_area
    finally:
        free(rx)
        free(ry)
        free(ax)
        free(ay)
        free(bx)
        free(by)
    return out


def cond_poisson_derivs(double[:, ::1] X, double[::1] y, double[::1] offset,
                        long[::1] ptr, double[::1] beta):
    """Conditional Poisson log-likelihood, score and information.

    Strata are the row blocks ``ptr[s]:ptr[s+1]``. Returns
    ``(loglik, score, information, fitted)`` where ``fitted`` is the
    stratum total times the within-stratum multinomial probability.
    """
    cdef long n = X.shape[0], p = X.shape[1], S = ptr.shape[0] - 1
    cdef cnp.ndarray[cnp.float64_t, ndim=1] score = np.zeros(p)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] info = np.zeros((p, p))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] fitted = np.empty(n)
    cdef double[::1] eta = np.empty(n)
    cdef double[::1] xbar = np.empty(p)
    cdef double[:, ::1] I = info
    cdef double[::1] g = score
    cdef double[::1] mu = fitted
    cdef double ll = 0.0, emax, tot, ysum, w, d, logtot
    cdef long s, i, j, k, lo, hi
    for i in range(n):
        d = offset[i]
        for j in range(p):
            d += X[i, j] * beta[j]
        eta[i] = d
    for s in range(S):
        lo = ptr[s]
        hi = ptr[s + 1]
        if hi <= lo:
            continue
        emax = eta[lo]
        ysum = 0.0
        for i in range(lo, hi):
            if eta[i] > emax:
                emax = eta[i]
            ysum += y[i]
        tot = 0.0
        for i in range(lo, hi):
            tot += exp(eta[i] - emax)
        logtot = log(tot) + emax
        for j in range(p):
            xbar[j] = 0.0
        for i in range(lo, hi):
            w = exp(eta[i] - logtot)
            mu[i] = ysum * w
            if y[i] > 0:
                ll += y[i] * (eta[i] - logtot)
            d = y[i] - ysum * w
            for j in range(p):
                g[j] += d * X[i, j]
                xbar[j] += w * X[i, j]
            if ysum > 0:
                for j in range(p):
                    for k in range(j + 1):
                        I[j, k] += ysum * w * X[i, j] * X[i, k]
        if ysum > 0:
            for j in range(p):
                for k in range(j + 1):
                    I[j, k] -= ysum * xbar[j] * xbar[k]
    for j in range(p):
        for k in range(j):
            I[k, j] = I[j, k]
    return ll, score, info, fitted
