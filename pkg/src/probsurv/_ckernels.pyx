# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()


def cox_loglik_grad_sorted(const double[::1] risk, const double[::1] times,
                           const double[::1] events):
    cdef Py_ssize_t n = risk.shape[0]
    cdef Py_ssize_t i, j, start, end
    cdef double m, s, loglik = 0.0, cum = 0.0, d
    grad_arr = np.empty(n, dtype=np.float64)
    w_arr = np.empty(n, dtype=np.float64)
    rs_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] grad = grad_arr
    cdef double[::1] w = w_arr
    cdef double[::1] riskset = rs_arr
    if n == 0:
        return 0.0, grad_arr
    m = risk[0]
    for i in range(1, n):
        if risk[i] > m:
            m = risk[i]
    for i in range(n):
        w[i] = exp(risk[i] - m)

    # risk-set sums, shared by every member of a tie group
    s = 0.0
    i = n - 1
    while i >= 0:
        end = i
        while i > 0 and times[i - 1] == times[end]:
            i -= 1
        start = i
        for j in range(start, end + 1):
            s += w[j]
        for j in range(start, end + 1):
            riskset[j] = s
        i = start - 1

    i = 0
    while i < n:
        start = i
        d = 0.0
        while i < n and times[i] == times[start]:
            if events[i] > 0:
                loglik += risk[i] - m - log(riskset[i])
                d += 1.0
            i += 1
        end = i
        if d > 0:
            cum += d / riskset[start]
        for j in range(start, end):
            grad[j] = events[j] - w[j] * cum
    return loglik, grad_arr


def breslow_sorted(const double[::1] risk, const double[::1] times,
                   const double[::1] events):
    cdef Py_ssize_t n = risk.shape[0]
    cdef Py_ssize_t i, start, k = 0
    cdef double m, s = 0.0, d, scale
    m = risk[0]
    for i in range(1, n):
        if risk[i] > m:
            m = risk[i]
    scale = exp(-m)
    suffix_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] suffix = suffix_arr
    for i in range(n - 1, -1, -1):
        s += exp(risk[i] - m)
        suffix[i] = s
    ut_arr = np.empty(n, dtype=np.float64)
    inc_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] ut = ut_arr
    cdef double[::1] inc = inc_arr
    i = 0
    while i < n:
        start = i
        d = 0.0
        while i < n and times[i] == times[start]:
            if events[i] > 0:
                d += 1.0
            i += 1
        if d > 0:
            ut[k] = times[start]
            inc[k] = d * scale / suffix[start]
            k += 1
    return ut_arr[:k].copy(), inc_arr[:k].copy()


def concordance_counts(const double[::1] times, const double[::1] events,
                       const cnp.int64_t[::1] col, const double[:, ::1] surv):
    cdef Py_ssize_t n = times.shape[0]
    cdef Py_ssize_t i, j
    cdef cnp.int64_t k
    cdef double conc = 0.0, own, other
    cdef long long comp = 0
    for i in range(n):
        if events[i] <= 0:
            continue
        k = col[i]
        if k >= 0:
            own = surv[i, k]
        for j in range(n):
            if times[j] > times[i]:
                comp += 1
                if k < 0:
                    conc += 0.5
                else:
                    other = surv[j, k]
                    if other > own:
                        conc += 1.0
                    elif other == own:
                        conc += 0.5
    return conc, comp
