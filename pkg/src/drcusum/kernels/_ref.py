"""Pure-numpy fallback for the compiled kernels.

Semantics must match kernels._core exactly up to floating-point summation
order: CuSum recursions here use the chunked prefix-min identity
S_k = max(max(carry,0) + W_k, W_k - min_{m<k} W_m) instead of a scalar loop,
which is algebraically the same recursion. Argmin/argmax ties break to the
lowest index in both backends.
"""
from __future__ import annotations

import numpy as np

_CHUNK = 1 << 16


def tilted_stats(cost_mat: np.ndarray, logw: np.ndarray, lam: float, u: np.ndarray):
    """Fused moments of the tilted measure w_k * exp(-C(x_k)).

    cost_mat is (K, n) with entries c^s(x_k, omega_i); logw are log base
    weights (quadrature weight times density, or -log N for sample averages).
    C(x_k) = min_i(lam * cost - u_i), lowest index on ties.

    Returns (logz, ec, cell):
      logz  = log sum_k w_k exp(-C_k)
      ec    = E_tilted[cost at the argmin atom]
      cell  = per-atom tilted probability mass (length n)
    """
    A = lam * cost_mat - u[None, :]
    idx = np.argmin(A, axis=1)
    rows = np.arange(A.shape[0])
    C = A[rows, idx]
    z = logw - C
    m = np.max(z)
    if not np.isfinite(m):
        # all mass vanished (or blew up): report as-is, caller validates
        return float(m), 0.0, np.zeros(u.size)
    p = np.exp(z - m)
    Z = float(np.sum(p))
    logz = m + np.log(Z)
    pn = p / Z
    ec = float(np.sum(pn * cost_mat[rows, idx]))
    cell = np.bincount(idx, weights=pn, minlength=u.size)
    return float(logz), ec, cell


def min_c(cost_mat: np.ndarray, lam: float, u: np.ndarray):
    """C(x_k) = min_i(lam * cost_mat[k, i] - u_i) and its argmin (lowest index)."""
    A = lam * cost_mat - u[None, :]
    idx = np.argmin(A, axis=1)
    C = A[np.arange(A.shape[0]), idx]
    return C, idx.astype(np.int64)


def _chunk_path(llr, carry):
    """CuSum statistic over one chunk from scalar carry; returns the S path."""
    W = np.cumsum(llr)
    prefmin = np.minimum.accumulate(np.concatenate(([0.0], W[:-1])))
    return np.maximum(max(carry, 0.0) + W, W - prefmin)


def cusum_path(llr: np.ndarray, s0: float = 0.0) -> np.ndarray:
    """Full path S_1..S_T of S_k = max(S_{k-1}, 0) + llr_k starting from S_0 = s0."""
    llr = np.asarray(llr, dtype=float)
    out = np.empty(llr.size)
    carry = float(s0)
    for off in range(0, llr.size, _CHUNK):
        seg = _chunk_path(llr[off:off + _CHUNK], carry)
        out[off:off + seg.size] = seg
        carry = float(seg[-1])
    return out


def cusum_run(llr: np.ndarray, b: float, s0: float = 0.0):
    """First k (0-based) with S_k >= b, or -1; returns (stop_idx, S at exit)."""
    llr = np.asarray(llr, dtype=float)
    carry = float(s0)
    for off in range(0, llr.size, _CHUNK):
        seg = _chunk_path(llr[off:off + _CHUNK], carry)
        hits = np.nonzero(seg >= b)[0]
        if hits.size:
            k = int(hits[0])
            return off + k, float(seg[k])
        carry = float(seg[-1])
    return -1, carry


def multi_cusum_run(llr_mat: np.ndarray, b: float, s0: np.ndarray):
    """M parallel CuSum recursions; stop at the first step where max_m S >= b.

    Returns (stop_idx or -1, argmax_scenario or -1, final stats length M);
    argmax takes the lowest index on exact ties.
    """
    llr_mat = np.atleast_2d(np.asarray(llr_mat, dtype=float))
    M, T = llr_mat.shape
    carry = np.asarray(s0, dtype=float).copy()
    for off in range(0, T, _CHUNK):
        seg = np.empty((M, min(_CHUNK, T - off)))
        for m in range(M):
            seg[m] = _chunk_path(llr_mat[m, off:off + _CHUNK], carry[m])
        colmax = seg.max(axis=0)
        hits = np.nonzero(colmax >= b)[0]
        if hits.size:
            k = int(hits[0])
            stats = seg[:, k].copy()
            return off + k, int(np.argmax(stats)), stats
        carry = seg[:, -1].copy()
    return -1, -1, carry
