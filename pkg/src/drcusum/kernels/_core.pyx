# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: tilted-measure moments for the dual solver and CuSum
crossing scans for the Monte-Carlo harness.

Must match kernels._ref semantically: lowest-index tie-breaking everywhere;
CuSum statistics accumulate in long double so 1e7-step no-change runs do not
drift.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, INFINITY

cnp.import_array()


def tilted_stats(const double[:, ::1] cost_mat, const double[::1] logw, double lam, const double[::1] u):
    cdef Py_ssize_t K = cost_mat.shape[0]
    cdef Py_ssize_t n = cost_mat.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] C_arr = np.empty(K, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] idx_arr = np.empty(K, dtype=np.int64)
    cdef double[::1] C = C_arr
    cdef long long[::1] idx = idx_arr
    cdef Py_ssize_t k, i, best
    cdef double a, cmin, z, m
    m = -INFINITY
    for k in range(K):
        best = 0
        cmin = lam * cost_mat[k, 0] - u[0]
        for i in range(1, n):
            a = lam * cost_mat[k, i] - u[i]
            if a < cmin:
                cmin = a
                best = i
        C[k] = cmin
        idx[k] = best
        z = logw[k] - cmin
        if z > m:
            m = z
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cell_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] cell = cell_arr
    if m == -INFINITY or m != m:
        return float(m), 0.0, cell_arr
    cdef long double Z = 0.0
    cdef long double ec = 0.0
    cdef double p
    for k in range(K):
        p = exp(logw[k] - C[k] - m)
        Z += p
        ec += p * cost_mat[k, idx[k]]
        cell[idx[k]] += p
    cdef double Zd = <double> Z
    for i in range(n):
        cell[i] /= Zd
    return float(m + log(Zd)), float(ec / Z), cell_arr


def min_c(const double[:, ::1] cost_mat, double lam, const double[::1] u):
    cdef Py_ssize_t K = cost_mat.shape[0]
    cdef Py_ssize_t n = cost_mat.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] C_arr = np.empty(K, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] idx_arr = np.empty(K, dtype=np.int64)
    cdef double[::1] C = C_arr
    cdef long long[::1] idx = idx_arr
    cdef Py_ssize_t k, i, best
    cdef double a, cmin
    for k in range(K):
        best = 0
        cmin = lam * cost_mat[k, 0] - u[0]
        for i in range(1, n):
            a = lam * cost_mat[k, i] - u[i]
            if a < cmin:
                cmin = a
                best = i
        C[k] = cmin
        idx[k] = best
    return C_arr, idx_arr


def cusum_path(const double[::1] llr, double s0=0.0):
    cdef Py_ssize_t T = llr.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out_arr = np.empty(T, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef long double S = s0
    cdef Py_ssize_t k
    for k in range(T):
        if S < 0.0:
            S = 0.0
        S += llr[k]
        out[k] = <double> S
    return out_arr


def cusum_run(const double[::1] llr, double b, double s0=0.0):
    cdef Py_ssize_t T = llr.shape[0]
    cdef long double S = s0
    cdef Py_ssize_t k
    for k in range(T):
        if S < 0.0:
            S = 0.0
        S += llr[k]
        if S >= b:
            return k, float(S)
    return -1, float(S)


def multi_cusum_run(const double[:, ::1] llr_mat, double b, const double[::1] s0):
    cdef Py_ssize_t M = llr_mat.shape[0]
    cdef Py_ssize_t T = llr_mat.shape[1]
    cdef cnp.ndarray[cnp.longdouble_t, ndim=1] S_arr = np.empty(M, dtype=np.longdouble)
    cdef long double[::1] S = S_arr
    cdef Py_ssize_t k, m, best
    cdef long double smax
    for m in range(M):
        S[m] = s0[m]
    for k in range(T):
        smax = -INFINITY
        best = 0
        for m in range(M):
            if S[m] < 0.0:
                S[m] = 0.0
            S[m] += llr_mat[m, k]
            if S[m] > smax:
                smax = S[m]
                best = m
        if smax >= b:
            return k, best, S_arr.astype(np.float64)
    return -1, -1, S_arr.astype(np.float64)
