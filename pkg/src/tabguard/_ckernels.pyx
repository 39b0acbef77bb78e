# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Semantics mirror ``_pykernels`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()


def portfolio_losses(const double[:, ::1] u, const double[::1] pd, const double[::1] w):
    cdef Py_ssize_t s, i
    cdef Py_ssize_t n_sims = u.shape[0]
    cdef Py_ssize_t n = u.shape[1]
    cdef double acc
    out = np.empty(n_sims, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for s in range(n_sims):
            acc = 0.0
            for i in range(n):
                if u[s, i] < pd[i]:
                    acc = acc + w[i]
            o[s] = acc
    return out


def auc_counts(const double[::1] s_sorted, const unsigned char[::1] y_sorted):
    cdef Py_ssize_t n = s_sorted.shape[0]
    cdef Py_ssize_t i = 0, j
    cdef long long neg_below = 0, greater = 0, ties = 0, p, q
    while i < n:
        j = i
        p = 0
        q = 0
        while j < n and s_sorted[j] == s_sorted[i]:
            if y_sorted[j]:
                p += 1
            else:
                q += 1
            j += 1
        greater += p * neg_below
        ties += p * q
        neg_below += q
        i = j
    return int(greater), int(ties)


def ks_gap(const double[::1] a, const double[::1] b):
    cdef Py_ssize_t na = a.shape[0], nb = b.shape[0]
    cdef Py_ssize_t i = 0, j = 0
    cdef double x, gap, best = 0.0
    cdef double fna = <double>na, fnb = <double>nb
    while i < na or j < nb:
        if j >= nb or (i < na and a[i] <= b[j]):
            x = a[i]
        else:
            x = b[j]
        while i < na and a[i] <= x:
            i += 1
        while j < nb and b[j] <= x:
            j += 1
        gap = fabs(i / fna - j / fnb)
        if gap > best:
            best = gap
    return best


cdef inline Py_ssize_t _lower_bin(double v, const double[::1] edges) nogil:
    # first edge >= v, minus one, clamped into [0, M-1]
    cdef Py_ssize_t lo = 0, hi = edges.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if edges[mid] < v:
            lo = mid + 1
        else:
            hi = mid
    lo -= 1
    if lo < 0:
        lo = 0
    if lo > edges.shape[0] - 2:
        lo = edges.shape[0] - 2
    return lo


def bin_stats(const double[::1] scores, const double[::1] labels, const double[::1] edges):
    cdef Py_ssize_t m = edges.shape[0] - 1
    cdef Py_ssize_t n = scores.shape[0], i, k
    counts = np.zeros(m, dtype=np.int64)
    conf = np.zeros(m, dtype=np.float64)
    acc = np.zeros(m, dtype=np.float64)
    cdef long long[::1] c = counts
    cdef double[::1] cf = conf
    cdef double[::1] ac = acc
    with nogil:
        for i in range(n):
            k = _lower_bin(scores[i], edges)
            c[k] += 1
            cf[k] += scores[i]
            ac[k] += labels[i]
    return counts, conf, acc


def wasserstein_sorted(const double[::1] a, const double[::1] b):
    cdef Py_ssize_t na = a.shape[0], nb = b.shape[0]
    cdef Py_ssize_t i = 0, j = 0
    cdef double x, nxt, total = 0.0
    cdef double fna = <double>na, fnb = <double>nb
    if na == 0 or nb == 0:
        return 0.0
    if a[0] <= b[0]:
        x = a[0]
    else:
        x = b[0]
    while True:
        while i < na and a[i] <= x:
            i += 1
        while j < nb and b[j] <= x:
            j += 1
        if i >= na and j >= nb:
            break
        if j >= nb or (i < na and a[i] <= b[j]):
            nxt = a[i]
        else:
            nxt = b[j]
        total += fabs(i / fna - j / fnb) * (nxt - x)
        x = nxt
    return total
