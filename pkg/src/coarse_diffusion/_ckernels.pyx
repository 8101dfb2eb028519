# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: Gaussian-mixture log-density/score and nearest-neighbour
squared distances. Semantics match ``_pykernels`` exactly."""

import numpy as np

from cython.parallel import prange
from libc.math cimport exp, log, sqrt, M_PI, INFINITY


def mixture_logpdf_score(const double[:, ::1] x, const double[:, ::1] atoms,
                         const double[::1] logw, double t, bint want_score=True):
    cdef Py_ssize_t m = x.shape[0], d = x.shape[1], n = atoms.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double inv2t = 0.5 / t
    cdef double const = -0.5 * d * log(2.0 * M_PI * t)
    cdef double mx, s, d2, diff, l, w, scale
    logp_arr = np.empty(m, dtype=np.float64)
    acc_arr = np.zeros((m, d), dtype=np.float64)
    cdef double[::1] logp = logp_arr
    cdef double[:, ::1] acc = acc_arr

    for i in prange(m, nogil=True, schedule="static"):
        mx = -INFINITY
        s = 0.0
        for j in range(n):
            d2 = 0.0
            for k in range(d):
                diff = x[i, k] - atoms[j, k]
                d2 = d2 + diff * diff
            l = logw[j] - d2 * inv2t
            if l > mx:
                # rescale running sums to the new maximum
                scale = exp(mx - l)
                s = s * scale + 1.0
                if want_score:
                    for k in range(d):
                        acc[i, k] = acc[i, k] * scale + atoms[j, k]
                mx = l
            else:
                w = exp(l - mx)
                s = s + w
                if want_score:
                    for k in range(d):
                        acc[i, k] = acc[i, k] + w * atoms[j, k]
        logp[i] = mx + log(s) + const
        if want_score:
            for k in range(d):
                acc[i, k] = (acc[i, k] / s - x[i, k]) / t

    if want_score:
        return logp_arr, acc_arr
    return logp_arr, None


def two_nearest_sq(const double[:, ::1] x, const double[:, ::1] atoms):
    cdef Py_ssize_t m = x.shape[0], d = x.shape[1], n = atoms.shape[0]
    cdef Py_ssize_t i, j, k, best
    cdef double d1, d2, dd, diff
    d1_arr = np.empty(m, dtype=np.float64)
    d2_arr = np.empty(m, dtype=np.float64)
    idx_arr = np.empty(m, dtype=np.intp)
    cdef double[::1] o1 = d1_arr
    cdef double[::1] o2 = d2_arr
    cdef Py_ssize_t[::1] oi = idx_arr

    for i in prange(m, nogil=True, schedule="static"):
        d1 = INFINITY
        d2 = INFINITY
        best = -1
        for j in range(n):
            dd = 0.0
            for k in range(d):
                diff = x[i, k] - atoms[j, k]
                dd = dd + diff * diff
            if dd < d1:
                d2 = d1
                d1 = dd
                best = j
            elif dd < d2:
                d2 = dd
        o1[i] = d1
        o2[i] = d2
        oi[i] = best
    return d1_arr, d2_arr, idx_arr


ctypedef fused real:
    float
    double


def adamw_update(real[::1] p, const real[::1] g, real[::1] m, real[::1] v, double gscale,
                 double lr, double wd, double b1, double b2, double eps, double bc1, double bc2):
    """Fused in-place AdamW update on flat contiguous buffers."""
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double gi, mi, vi, decay = 1.0 - lr * wd
    with nogil:
        for i in range(n):
            gi = g[i] * gscale
            mi = b1 * m[i] + (1.0 - b1) * gi
            vi = b2 * v[i] + (1.0 - b2) * gi * gi
            m[i] = <real>mi
            v[i] = <real>vi
            p[i] = <real>(p[i] * decay - lr * (mi / bc1) / (sqrt(vi / bc2) + eps))

