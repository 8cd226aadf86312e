# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled coordinate-descent kernel (covariance updates)."""

import numpy as np

from libc.math cimport fabs
from scipy.linalg.cython_lapack cimport dposv


cdef inline double _soft(double x, double t) noexcept nogil:
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


cdef long _sweeps(const double[:, ::1] gram, double[::1] grad, double[::1] w,
                  const double[::1] thresh, double tol, long max_iter,
                  bint* converged) noexcept nogil:
    cdef Py_ssize_t q = gram.shape[0]
    cdef Py_ssize_t j, k
    cdef long it, sweeps = 0
    cdef double gjj, old, new, d, max_delta, max_w, scale
    converged[0] = False
    for it in range(max_iter):
        max_delta = 0.0
        max_w = 0.0
        for j in range(q):
            gjj = gram[j, j]
            if gjj <= 0.0:
                continue
            old = w[j]
            new = _soft(grad[j] + gjj * old, thresh[j]) / gjj
            if new != old:
                d = new - old
                w[j] = new
                for k in range(q):
                    grad[k] = grad[k] - gram[j, k] * d
                if fabs(d) > max_delta:
                    max_delta = fabs(d)
            if fabs(new) > max_w:
                max_w = fabs(new)
        sweeps = it + 1
        scale = max_w if max_w > 1.0 else 1.0
        if max_delta < tol * scale:
            converged[0] = True
            break
    return sweeps


cdef bint _polish(const double[:, ::1] gram, const double[::1] corr, double[::1] grad,
                  double[::1] w, const double[::1] thresh, int[::1] act,
                  double[::1] gaa, double[::1] x, double[::1] trial) noexcept nogil:
    """Exact minimizer for the current sign pattern; applied only if it is optimal."""
    cdef Py_ssize_t q = gram.shape[0]
    cdef int na = 0, i, l, info = 0, nrhs = 1
    cdef Py_ssize_t j, k
    cdef double s, g
    cdef char uplo = b'L'
    for j in range(q):
        if w[j] != 0.0:
            act[na] = <int>j
            na += 1
    if na == 0:
        return False
    for i in range(na):
        j = act[i]
        s = 1.0 if w[j] > 0 else -1.0
        x[i] = corr[j] - thresh[j] * s
        for l in range(na):
            gaa[i * na + l] = gram[j, act[l]]
    dposv(&uplo, &na, &nrhs, &gaa[0], &na, &x[0], &na, &info)
    if info != 0:
        return False
    for i in range(na):
        if (x[i] > 0) != (w[act[i]] > 0) or x[i] == 0.0:
            return False
    for k in range(q):
        g = corr[k]
        for i in range(na):
            g = g - gram[k, act[i]] * x[i]
        trial[k] = g
    for k in range(q):
        if w[k] == 0.0 and fabs(trial[k]) > thresh[k]:
            return False
    for k in range(q):
        grad[k] = trial[k]
        w[k] = 0.0
    for i in range(na):
        w[act[i]] = x[i]
    return True


def cd_solve(const double[:, ::1] gram, const double[::1] corr, double[::1] w,
             const double[::1] thresh, double tol, long max_iter):
    """Cyclic coordinate descent on 0.5 w'Gw - c'w + sum_j thresh_j |w_j|.

    ``w`` is updated in place.  Returns ``(n_sweeps, converged)``.
    """
    cdef double[::1] grad = np.asarray(corr) - np.asarray(gram) @ np.asarray(w)
    cdef bint converged = False
    cdef long sweeps
    with nogil:
        sweeps = _sweeps(gram, grad, w, thresh, tol, max_iter, &converged)
    return sweeps, converged


def cd_path(const double[:, ::1] gram, const double[::1] corr, double[::1] w,
            const double[::1] penalty, const double[::1] grid, double tol, long max_iter,
            long polish_after):
    """Warm-started coordinate descent along ``grid`` (thresholds lam * penalty).

    If a lambda is not converged after ``polish_after`` sweeps, the exact
    active-set solution is tried, and again after every further
    ``polish_after`` sweeps.  ``w`` ends at the last
    solution.  Returns ``(W, sweeps, converged)`` with one row per lambda.
    """
    cdef Py_ssize_t q = gram.shape[0]
    cdef Py_ssize_t L = grid.shape[0]
    cdef Py_ssize_t l, j
    cdef double[:, ::1] W = np.empty((L, q))
    cdef long[::1] sweeps = np.zeros(L, dtype=np.int_)
    cdef unsigned char[::1] conv = np.zeros(L, dtype=np.uint8)
    cdef double[::1] grad = np.asarray(corr) - np.asarray(gram) @ np.asarray(w)
    cdef double[::1] thresh = np.empty(q)
    cdef int[::1] act = np.empty(max(q, 1), dtype=np.intc)
    cdef double[::1] gaa = np.empty(max(q * q, 1))
    cdef double[::1] x = np.empty(max(q, 1))
    cdef double[::1] trial = np.empty(max(q, 1))
    cdef bint converged = False
    cdef long chunk, done
    with nogil:
        for l in range(L):
            for j in range(q):
                thresh[j] = grid[l] * penalty[j]
            done = 0
            converged = False
            while not converged and done < max_iter:
                if done > 0:
                    _polish(gram, corr, grad, w, thresh, act, gaa, x, trial)
                chunk = polish_after if polish_after < max_iter - done else max_iter - done
                done = done + _sweeps(gram, grad, w, thresh, tol, chunk, &converged)
            sweeps[l] = done
            conv[l] = converged
            for j in range(q):
                W[l, j] = w[j]
    return np.asarray(W), np.asarray(sweeps), np.asarray(conv).astype(bool)
