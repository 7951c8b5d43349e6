"""Comparator detectors: exact-knowledge CuSum, Gaussian-MLE CuSum, and a
window-limited nonparametric GLR statistic built on leave-one-out kernel
density estimates.

All baselines expose the same plug-in surface as the robust scorer: llr
providers implement llr(x)/llr_batch(X); the NGLR detector is a stateful
direct-statistic provider (statistic(x) returns the already-maximized test
statistic, so it bypasses the CuSum recursion).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .distributions import (
    DataError,
    EmpiricalDistribution,
    Gaussian1D,
    GaussianDiag,
    PreChangeModel,
    as_coords,
    log_density,
    log_density_batch,
)

__all__ = [
    "GaussianMleFit",
    "KdeConfig",
    "ExactLlrScorer",
    "GaussianMleScorer",
    "NglrScorer",
    "exact_cusum_llr",
    "fit_gaussian_mle",
    "kde_loo_density",
    "nglr_statistic",
    "bandwidth_rule",
]

_LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Exact-knowledge and Gaussian-MLE scorers
# ---------------------------------------------------------------------------


def exact_cusum_llr(q_model: PreChangeModel, p_model: PreChangeModel, x) -> float:
    """log p(x) - log q(x) with both densities known."""
    return log_density(p_model, x) - log_density(q_model, x)


@dataclass(frozen=True)
class ExactLlrScorer:
    q_model: PreChangeModel
    p_model: PreChangeModel

    def llr(self, x) -> float:
        return exact_cusum_llr(self.q_model, self.p_model, x)

    def llr_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return log_density_batch(self.p_model, X) - log_density_batch(self.q_model, X)


@dataclass(frozen=True)
class GaussianMleFit:
    """Per-coordinate MLE of the post-change mean and (biased, 1/n) variance."""

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mean, float)).copy()
        var = np.atleast_1d(np.asarray(self.variance, float)).copy()
        if mu.shape != var.shape:
            raise ValueError("mean and variance shapes disagree")
        if not np.all(var > 0):
            raise ValueError("degenerate fit: zero variance")
        mu.flags.writeable = False
        var.flags.writeable = False
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "variance", var)

    def as_model(self) -> PreChangeModel:
        if self.mean.size == 1:
            return Gaussian1D(float(self.mean[0]), float(self.variance[0]))
        return GaussianDiag(self.mean, self.variance)


def fit_gaussian_mle(training: EmpiricalDistribution) -> GaussianMleFit:
    """Sample mean and 1/n variance per coordinate. Needs n >= 2; a coordinate
    with zero spread is rejected rather than patched."""
    if training.n < 2:
        raise ValueError(f"MLE fit needs n >= 2 samples, got {training.n}")
    mu = training.samples.mean(axis=0)
    var = training.samples.var(axis=0)  # ddof=0: the MLE convention
    if not np.all(var > 0):
        raise ValueError("degenerate fit: some coordinate has zero sample variance")
    return GaussianMleFit(mean=mu, variance=var)


@dataclass(frozen=True)
class GaussianMleScorer:
    q_model: PreChangeModel
    fit: GaussianMleFit

    def llr(self, x) -> float:
        return exact_cusum_llr(self.q_model, self.fit.as_model(), x)

    def llr_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        m = self.fit.as_model()
        return log_density_batch(m, X) - log_density_batch(self.q_model, X)


# ---------------------------------------------------------------------------
# Leave-one-out KDE and the windowed NGLR statistic
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KdeConfig:
    """Gaussian product kernel with per-coordinate bandwidths and a window."""

    bandwidths: np.ndarray
    window: int
    kernel: str = "gaussian"

    def __post_init__(self):
        h = np.atleast_1d(np.asarray(self.bandwidths, float)).copy()
        if not np.all(h > 0):
            raise ValueError("bandwidths must be strictly positive")
        if not (isinstance(self.window, (int, np.integer)) and self.window >= 2):
            raise ValueError("window must be an integer >= 2 (leave-one-out needs a peer)")
        if self.kernel != "gaussian":
            raise ValueError(f"unsupported kernel {self.kernel!r}")
        h.flags.writeable = False
        object.__setattr__(self, "bandwidths", h)
        object.__setattr__(self, "window", int(self.window))


def bandwidth_rule(window: int, d: int, samples) -> np.ndarray:
    """Rule-of-thumb bandwidths: window^(-1/(d+4)) times the per-coordinate
    sample standard deviation (ddof=1). Fixed constants such as 50^(-0.2) or
    30^(-1/7) are just this rule at unit spread; configs may pin them
    explicitly instead of calling this."""
    arr = np.atleast_2d(np.asarray(samples, dtype=float))
    if arr.shape[1] != d:
        arr = arr.reshape(-1, d)
    sigma = arr.std(axis=0, ddof=1) if arr.shape[0] > 1 else np.zeros(d)
    if not np.all(sigma > 0):
        raise ValueError("cannot form bandwidths: zero sample spread in some coordinate")
    return float(window) ** (-1.0 / (d + 4.0)) * sigma


def _log_kernel_sum(x: np.ndarray, contributors: np.ndarray, h: np.ndarray) -> float:
    """log sum over contributors of the product Gaussian kernel at (x-y)/h."""
    z = (x[None, :] - contributors) / h[None, :]
    logs = -0.5 * np.sum(z * z, axis=1) - 0.5 * x.size * _LOG_2PI
    return float(logsumexp(logs))


def _log_window_density(x: np.ndarray, window: np.ndarray, training: np.ndarray,
                        h: np.ndarray, exclude: Optional[int]) -> float:
    """log of the window-plus-training KDE at x, normalized by the number of
    kernel terms actually summed times prod(h); exclude drops one window row."""
    parts = []
    count = 0
    if window.shape[0]:
        w = window if exclude is None else np.delete(window, exclude, axis=0)
        if w.shape[0]:
            parts.append(_log_kernel_sum(x, w, h))
            count += w.shape[0]
    if training.shape[0]:
        parts.append(_log_kernel_sum(x, training, h))
        count += training.shape[0]
    if count == 0:
        raise DataError("no contributors left for the leave-one-out density")
    return float(logsumexp(np.asarray(parts))) - math.log(count) - float(np.sum(np.log(h)))


def kde_loo_density(window_samples, training_samples, config: KdeConfig, x_j,
                    exclude_index: Optional[int] = None) -> float:
    """Leave-one-out KDE value at x_j.

    Contributors are the window rows (minus the excluded one) plus every
    training atom; the normalizer is the contributor count times prod(h), so
    the estimate integrates to one. When exclude_index is None and x_j equals
    a window row exactly, that first matching row is dropped (scoring a point
    against its own peers); otherwise nothing is excluded.
    """
    win = np.atleast_2d(np.asarray(window_samples, dtype=float)) if \
        np.size(window_samples) else np.empty((0, np.atleast_1d(x_j).size))
    tr = training_samples.samples if isinstance(training_samples, EmpiricalDistribution) \
        else np.atleast_2d(np.asarray(training_samples, dtype=float))
    x = as_coords(x_j)
    if exclude_index is None and win.shape[0]:
        hits = np.nonzero(np.all(win == x[None, :], axis=1))[0]
        exclude_index = int(hits[0]) if hits.size else None
    h = config.bandwidths
    if h.size != x.size:
        raise DataError(f"bandwidth dimension {h.size} does not match data dimension {x.size}")
    return math.exp(_log_window_density(x, win, tr, h, exclude_index))


def nglr_statistic(history_window, training, config: KdeConfig,
                   q_model: PreChangeModel, k: int) -> float:
    """Window-limited nonparametric GLR statistic at step k.

    history_window holds the last min(k, W) observations in arrival order.
    For each candidate onset l in (max(k-W,0), k], with suffix X_l..X_k:

      sum_{j in suffix} log[ p_hat_{-j}(X_j) / q(X_j) ]
        + sum_i log[ p_hat(omega_i) / q(omega_i) ]

    where p_hat pools the suffix with all training atoms; the scored
    observation is left out only in the first sum (training atoms are always
    included), and each density normalizes by its own kernel-term count.
    Returns the max over l. Brute-force recomputation each step, no recursion.
    """
    win = np.atleast_2d(np.asarray(history_window, dtype=float))
    tr = training.samples if isinstance(training, EmpiricalDistribution) \
        else np.atleast_2d(np.asarray(training, dtype=float))
    if k < 1:
        raise ValueError(f"step index must be >= 1, got {k}")
    expect = min(k, config.window)
    if win.shape[0] != expect:
        raise DataError(f"history window should hold {expect} rows at step {k}, "
                        f"got {win.shape[0]}")
    h = config.bandwidths
    best = -math.inf
    for length in range(1, expect + 1):  # length = k - l + 1
        suffix = win[win.shape[0] - length:]
        total = 0.0
        for j in range(length):
            lp = _log_window_density(suffix[j], suffix, tr, h, exclude=j)
            total += lp - log_density(q_model, suffix[j])
        for i in range(tr.shape[0]):
            lp = _log_window_density(tr[i], suffix, tr, h, exclude=None)
            total += lp - log_density(q_model, tr[i])
        best = max(best, total)
    return best


class NglrScorer:
    """Stateful direct-statistic provider: keeps the ring buffer of the last
    window observations; statistic(x) pushes x and returns the value at the
    new step. One instance per stream (reset() between streams)."""

    def __init__(self, q_model: PreChangeModel, training: EmpiricalDistribution,
                 config: KdeConfig):
        self.q_model = q_model
        self.training = training
        self.config = config
        self.reset()

    def reset(self):
        self._buf: list = []
        self._k = 0

    def statistic(self, x) -> float:
        xv = as_coords(x)
        self._buf.append(np.asarray(xv, dtype=float))
        if len(self._buf) > self.config.window:
            self._buf.pop(0)
        self._k += 1
        return nglr_statistic(np.asarray(self._buf), self.training, self.config,
                              self.q_model, self._k)
