# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels for the sequential hot loops.

Semantics (including floating-point operation order) must stay in lockstep
with ``abisens._kernels._fallback``; the test suite asserts bit-identical
outputs between the two implementations.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, isfinite

cnp.import_array()

IMPL = "compiled"


def first_passage_scan(double x0, double upper, double[::1] inc):
    """Walk ``x += inc[k]`` until x <= 0 or x >= upper.

    Returns (steps_consumed, hit, x_last) where hit is 0 (no crossing
    within the block), 1 (lower boundary) or 2 (upper boundary). The lower
    boundary wins if a single step crosses both.
    """
    cdef Py_ssize_t n = inc.shape[0]
    cdef Py_ssize_t k
    cdef double x = x0
    for k in range(n):
        x = x + inc[k]
        if x <= 0.0:
            return k + 1, 1, x
        if x >= upper:
            return k + 1, 2, x
    return n, 0, x


def sir_curves(double[::1] lam, double[::1] mu, double[::1] i0,
               double n_pop, int horizon, int substeps, bint keep_path=False):
    """Euler-integrate the S/I/R system for a batch of parameter rows.

    Returns (inew, status, path): ``inew[b, d]`` is the new-infection rate
    lam*S*I/N at day mark d (d = 0..horizon); ``status[b]`` is -1 on
    success or the substep index at which the state became non-finite;
    ``path`` is the (B, total_substeps + 1, 3) state trajectory when
    ``keep_path`` else None.
    """
    cdef Py_ssize_t n_batch = lam.shape[0]
    cdef int n_sub = horizon * substeps
    cdef double dt = 1.0 / substeps
    cdef cnp.ndarray[cnp.float64_t, ndim=2] inew = np.empty((n_batch, horizon + 1))
    cdef cnp.ndarray[cnp.int64_t, ndim=1] status = np.full(n_batch, -1, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=3] path_arr
    cdef double[:, :, ::1] path = None
    if keep_path:
        path_arr = np.empty((n_batch, n_sub + 1, 3))
        path = path_arr
    cdef double[:, ::1] inew_v = inew
    cdef cnp.int64_t[::1] status_v = status

    cdef Py_ssize_t b
    cdef int step, day
    cdef double s, i, r, lam_b, mu_b, rate, ds, di, dr
    for b in range(n_batch):
        lam_b = lam[b]
        mu_b = mu[b]
        i = i0[b]
        s = n_pop - i
        r = 0.0
        if keep_path:
            path[b, 0, 0] = s
            path[b, 0, 1] = i
            path[b, 0, 2] = r
        inew_v[b, 0] = lam_b * s * i / n_pop
        day = 1
        for step in range(n_sub):
            rate = lam_b * s * i / n_pop
            ds = -rate
            di = rate - mu_b * i
            dr = mu_b * i
            s = s + dt * ds
            i = i + dt * di
            r = r + dt * dr
            if s < 0.0:
                s = 0.0
            if i < 0.0:
                i = 0.0
            if not (isfinite(s) and isfinite(i) and isfinite(r)):
                # zero-and-continue so the day-mark bookkeeping (and the
                # numpy fallback) stay in lockstep after a blow-up
                if status_v[b] < 0:
                    status_v[b] = step
                s = 0.0
                i = 0.0
                r = 0.0
            if keep_path:
                path[b, step + 1, 0] = s
                path[b, step + 1, 1] = i
                path[b, step + 1, 2] = r
            if (step + 1) % substeps == 0:
                inew_v[b, day] = lam_b * s * i / n_pop
                day = day + 1
    return inew, status, (path_arr if keep_path else None)


def mmd_terms(double[:, ::1] x, double[:, ::1] y, double bandwidth):
    """Raw Gaussian-kernel sums for the unbiased squared-MMD U-statistic.

    Returns (sxx, syy, sxy): off-diagonal within-sample sums and the full
    cross sum, with k(a, b) = exp(-|a - b|^2 / (2 bandwidth^2)).
    """
    cdef Py_ssize_t n = x.shape[0], m = y.shape[0], d = x.shape[1]
    cdef double scale = 1.0 / (2.0 * bandwidth * bandwidth)
    cdef double sxx = 0.0, syy = 0.0, sxy = 0.0, acc, diff
    cdef Py_ssize_t i, j, k
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            acc = 0.0
            for k in range(d):
                diff = x[i, k] - x[j, k]
                acc += diff * diff
            sxx += exp(-scale * acc)
    for i in range(m):
        for j in range(m):
            if i == j:
                continue
            acc = 0.0
            for k in range(d):
                diff = y[i, k] - y[j, k]
                acc += diff * diff
            syy += exp(-scale * acc)
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for k in range(d):
                diff = x[i, k] - y[j, k]
                acc += diff * diff
            sxy += exp(-scale * acc)
    return sxx, syy, sxy
