"""Hot-loop kernels: compiled backend vs. the numpy reference vs. naive loops."""
from __future__ import annotations

import numpy as np
import pytest
from scipy.special import logsumexp

from drcusum import kernel_backend
from drcusum import kernels
from drcusum.kernels import _ref

COMPILED = kernel_backend == "cython"


def _naive_cusum_path(llr, s0=0.0):
    out = np.empty(len(llr))
    s = s0
    for k, v in enumerate(llr):
        s = max(s, 0.0) + v
        out[k] = s
    return out


def _naive_tilted(cost, logw, lam, u):
    A = lam * cost - u[None, :]
    idx = A.argmin(axis=1)
    C = A[np.arange(len(A)), idx]
    logz = logsumexp(logw - C)
    pn = np.exp(logw - C - logz)
    ec = float(np.sum(pn * cost[np.arange(len(A)), idx]))
    cell = np.zeros(u.size)
    for k, i in enumerate(idx):
        cell[i] += pn[k]
    return float(logz), ec, cell


@pytest.fixture(scope="module")
def rand_inputs():
    rng = np.random.default_rng(42)
    cost = rng.exponential(size=(300, 6))
    logw = rng.normal(size=300) - 3.0
    u = rng.normal(size=6)
    llr = rng.normal(0.05, 1.0, size=5000)
    llr_mat = rng.normal(-0.02, 1.0, size=(3, 4000))
    return cost, logw, u, llr, llr_mat


def test_backend_is_reported():
    assert kernel_backend in ("cython", "python")
    assert kernels.BACKEND == kernel_backend


def test_tilted_stats_matches_naive(rand_inputs):
    cost, logw, u, _, _ = rand_inputs
    for lam in (0.0, 0.3, 2.0):
        got = kernels.tilted_stats(np.ascontiguousarray(cost), logw, lam, u)
        ref = _naive_tilted(cost, logw, lam, u)
        assert got[0] == pytest.approx(ref[0], rel=1e-12, abs=1e-12)
        assert got[1] == pytest.approx(ref[1], rel=1e-12, abs=1e-12)
        np.testing.assert_allclose(got[2], ref[2], rtol=1e-12, atol=1e-14)
        assert np.asarray(got[2]).sum() == pytest.approx(1.0, abs=1e-12)


def test_min_c_matches_naive_and_breaks_ties_low(rand_inputs):
    cost, _, u, _, _ = rand_inputs
    C, idx = kernels.min_c(np.ascontiguousarray(cost), 0.7, u)
    A = 0.7 * cost - u[None, :]
    np.testing.assert_allclose(C, A.min(axis=1), rtol=1e-14)
    np.testing.assert_array_equal(idx, A.argmin(axis=1))
    # exact tie: duplicate atom columns -> lowest index wins
    tied = np.ascontiguousarray(np.column_stack([cost[:, 0], cost[:, 0]]))
    _, idx = kernels.min_c(tied, 1.0, np.zeros(2))
    assert np.all(idx == 0)


def test_cusum_path_matches_naive(rand_inputs):
    _, _, _, llr, _ = rand_inputs
    for s0 in (0.0, -2.5, 4.0):
        got = kernels.cusum_path(llr, s0)
        np.testing.assert_allclose(got, _naive_cusum_path(llr, s0), rtol=1e-12, atol=1e-12)


def test_cusum_path_crosses_chunk_boundary():
    rng = np.random.default_rng(7)
    llr = rng.normal(-0.01, 1.0, size=(1 << 16) + 500)
    got = kernels.cusum_path(llr)
    ref = _naive_cusum_path(llr)
    np.testing.assert_allclose(got, ref, rtol=1e-10, atol=1e-10)


def test_cusum_run_first_crossing(rand_inputs):
    _, _, _, llr, _ = rand_inputs
    b = 8.0
    k, s = kernels.cusum_run(llr, b)
    path = _naive_cusum_path(llr)
    hits = np.nonzero(path >= b)[0]
    assert k == hits[0]
    assert s == pytest.approx(path[k], rel=1e-12)
    # unreachable threshold -> -1 and the final statistic
    k, s = kernels.cusum_run(llr, 1e9)
    assert k == -1
    assert s == pytest.approx(path[-1], rel=1e-12)


def test_multi_cusum_run_matches_naive(rand_inputs):
    _, _, _, _, llr_mat = rand_inputs
    b = 4.0
    k, j, stats = kernels.multi_cusum_run(np.ascontiguousarray(llr_mat), b,
                                          np.zeros(llr_mat.shape[0]))
    paths = np.vstack([_naive_cusum_path(row) for row in llr_mat])
    colmax = paths.max(axis=0)
    hits = np.nonzero(colmax >= b)[0]
    assert k == hits[0]
    assert j == int(np.argmax(paths[:, k]))
    np.testing.assert_allclose(stats, paths[:, k], rtol=1e-12)


def test_multi_cusum_tie_breaks_to_lowest_index():
    llr_mat = np.ascontiguousarray(np.vstack([np.ones(5), np.ones(5)]))
    k, j, stats = kernels.multi_cusum_run(llr_mat, 3.0, np.zeros(2))
    assert (k, j) == (2, 0)
    np.testing.assert_allclose(stats, [3.0, 3.0])


def test_multi_cusum_censored_returns_carries():
    llr_mat = np.ascontiguousarray(np.vstack([-np.ones(10), np.full(10, 0.25)]))
    k, j, stats = kernels.multi_cusum_run(llr_mat, 100.0, np.zeros(2))
    assert (k, j) == (-1, -1)
    np.testing.assert_allclose(stats, [-1.0, 2.5])


def test_kernels_accept_readonly_inputs(rand_inputs):
    cost, logw, u, llr, llr_mat = rand_inputs
    ro = lambda a: np.ascontiguousarray(a)
    frozen = []
    for a in (cost, logw, u, llr, llr_mat):
        f = ro(a).copy()
        f.flags.writeable = False
        frozen.append(f)
    fc, fw, fu, fl, fm = frozen
    kernels.tilted_stats(fc, fw, 0.5, fu)
    kernels.min_c(fc, 0.5, fu)
    kernels.cusum_path(fl)
    kernels.cusum_run(fl, 5.0)
    kernels.multi_cusum_run(fm, 5.0, np.zeros(fm.shape[0]))


@pytest.mark.skipif(not COMPILED, reason="compiled backend not built")
def test_compiled_matches_reference_backend(rand_inputs):
    cost, logw, u, llr, llr_mat = rand_inputs
    cost = np.ascontiguousarray(cost)
    llr_mat = np.ascontiguousarray(llr_mat)
    for lam in (0.0, 1.3):
        a = kernels.tilted_stats(cost, logw, lam, u)
        b = _ref.tilted_stats(cost, logw, lam, u)
        assert a[0] == pytest.approx(b[0], rel=1e-13)
        assert a[1] == pytest.approx(b[1], rel=1e-13)
        np.testing.assert_allclose(a[2], b[2], rtol=1e-13, atol=1e-15)
    Ca, ia = kernels.min_c(cost, 0.9, u)
    Cb, ib = _ref.min_c(cost, 0.9, u)
    np.testing.assert_allclose(Ca, Cb, rtol=1e-15)
    np.testing.assert_array_equal(ia, ib)
    np.testing.assert_allclose(kernels.cusum_path(llr, 1.0), _ref.cusum_path(llr, 1.0),
                               rtol=1e-13, atol=1e-13)
    assert kernels.cusum_run(llr, 6.0) == pytest.approx(_ref.cusum_run(llr, 6.0))
    ka, ja, sa = kernels.multi_cusum_run(llr_mat, 3.0, np.zeros(3))
    kb, jb, sb = _ref.multi_cusum_run(llr_mat, 3.0, np.zeros(3))
    assert (ka, ja) == (kb, jb)
    np.testing.assert_allclose(sa, sb, rtol=1e-13)
