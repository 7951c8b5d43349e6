"""Probability-model plumbing shared by the whole package.

Observations, cost metrics, empirical sample sets, and the pre-change model
variants (analytic Gaussians, a generic density with sampler, and a pure
sample-based variant with no pointwise density). Everything here is immutable
after construction and safe to share across threads; all randomness flows
through explicit seeds.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


class DataError(ValueError):
    """Malformed external data: bad CSV rows, dimension mismatches, non-finite input."""


class SolverError(RuntimeError):
    """Numerical solve failed or did not converge within its budget."""


def as_coords(x) -> np.ndarray:
    """Coerce an observation-like value to a finite 1-d float vector."""
    if isinstance(x, Observation):
        return x.coords
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1 or arr.size < 1:
        raise DataError(f"observation must be a vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError("observation has non-finite coordinates")
    return arr


@dataclass(frozen=True)
class Observation:
    """A single data point in R^d."""

    coords: np.ndarray

    def __post_init__(self):
        arr = np.atleast_1d(np.asarray(self.coords, dtype=float))
        if arr.ndim != 1 or arr.size < 1:
            raise DataError(f"observation must be a vector, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataError("observation has non-finite coordinates")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "coords", arr)

    @property
    def dim(self) -> int:
        return self.coords.size


@dataclass(frozen=True)
class CostMetric:
    """Ground transport cost: c(x,y)^s with c the Euclidean norm.

    kind is an enum-by-string so new metrics can be added without changing the
    API; only "euclidean_l2" exists today because every experiment uses it.
    order_s must lie in [1,2] wherever concentration bounds are invoked; the
    constructor only enforces order_s >= 1.
    """

    kind: str = "euclidean_l2"
    order_s: float = 2.0

    def __post_init__(self):
        if self.kind != "euclidean_l2":
            raise ValueError(f"unsupported metric kind: {self.kind!r}")
        if not (self.order_s >= 1.0 and math.isfinite(self.order_s)):
            raise ValueError(f"order_s must be >= 1, got {self.order_s}")


def cost_power(metric: CostMetric, x, y) -> float:
    """(||x - y||_2)^s. Symmetric, nonnegative, zero iff x == y."""
    xv, yv = as_coords(x), as_coords(y)
    if xv.size != yv.size:
        raise DataError(f"dimension mismatch: {xv.size} vs {yv.size}")
    d = float(np.linalg.norm(xv - yv))
    return d ** metric.order_s


def cost_power_matrix(metric: CostMetric, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Pairwise c^s between rows of X (m,d) and rows of Y (n,d); returns (m,n)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[1] != Y.shape[1]:
        raise DataError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    if X.shape[1] == 1:
        dist = np.abs(X - Y.T)
    else:
        diff = X[:, None, :] - Y[None, :, :]
        dist = np.sqrt(np.einsum("mnd,mnd->mn", diff, diff))
    s = metric.order_s
    if s == 2.0:
        return dist * dist
    if s == 1.0:
        return dist
    return dist ** s


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Uniformly weighted atoms omega_1..omega_n, stored as an (n, d) array."""

    samples: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DataError(f"need an (n, d) sample array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataError("sample set has non-finite entries")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @classmethod
    def from_csv(cls, path) -> "EmpiricalDistribution":
        return cls(read_observations_csv(path))


# ---------------------------------------------------------------------------
# Pre-change model variants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Gaussian1D:
    mean: float = 0.0
    variance: float = 1.0

    def __post_init__(self):
        if not (self.variance > 0 and math.isfinite(self.variance)):
            raise ValueError(f"variance must be positive, got {self.variance}")

    @property
    def dim(self) -> int:
        return 1

    has_density = True

    @property
    def sigma(self) -> float:
        return math.sqrt(self.variance)


@dataclass(frozen=True)
class GaussianDiag:
    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mean, dtype=float))
        var = np.atleast_1d(np.asarray(self.variance, dtype=float))
        if mu.shape != var.shape or mu.ndim != 1:
            raise ValueError("mean and variance must be 1-d vectors of equal length")
        if not np.all(var > 0):
            raise ValueError("all variances must be strictly positive")
        mu, var = mu.copy(), var.copy()
        mu.flags.writeable = False
        var.flags.writeable = False
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "variance", var)

    @property
    def dim(self) -> int:
        return self.mean.size

    has_density = True


@dataclass(frozen=True)
class GenericDensity:
    """User-supplied log-density plus sampler.

    log_density_fn maps a length-d coordinate vector to a float (-inf allowed
    where the density vanishes); if vectorized=True it must also accept an
    (m, d) array and return a length-m array. sampler_fn(rng, count) draws an
    (count, d) array using the supplied numpy Generator.

    support / center / scale are quadrature hints for 1-d models: integration
    ranges are clipped to support and sized by scale. When center/scale are
    omitted they are estimated once from 1000 seeded draws.
    """

    log_density_fn: Callable
    sampler_fn: Callable
    dim: int = 1
    vectorized: bool = False
    support: Optional[Tuple[float, float]] = None
    center: Optional[float] = None
    scale: Optional[float] = None

    has_density = True

    def _hints(self) -> Tuple[float, float]:
        if self.center is not None and self.scale is not None:
            return float(self.center), float(self.scale)
        draws = self.sampler_fn(np.random.default_rng(0), 1000)
        draws = np.asarray(draws, dtype=float).reshape(1000, -1)
        c = float(np.mean(draws[:, 0]))
        s = float(np.std(draws[:, 0]))
        return (c if self.center is None else float(self.center),
                max(s, 1e-12) if self.scale is None else float(self.scale))


@dataclass(frozen=True)
class EmpiricalPreChange:
    """Pre-change law known only through N stored samples; no pointwise density.

    Operations that need q(x) pointwise must reject this variant; expectations
    against it become plain sample averages.
    """

    samples: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise DataError(f"need an (N, d) sample array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataError("sample set has non-finite entries")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def n_stored(self) -> int:
        return self.samples.shape[0]

    has_density = False


PreChangeModel = Union[Gaussian1D, GaussianDiag, GenericDensity, EmpiricalPreChange]


def log_density(model: PreChangeModel, x) -> float:
    """log q(x); -inf where q vanishes. Rejects EmpiricalPreChange."""
    if isinstance(model, EmpiricalPreChange):
        raise DataError("EmpiricalPreChange has no pointwise density")
    xv = as_coords(x)
    if xv.size != model.dim:
        raise DataError(f"dimension mismatch: got {xv.size}, model is {model.dim}-d")
    if isinstance(model, Gaussian1D):
        z = (xv[0] - model.mean)
        return -0.5 * (LOG_2PI + math.log(model.variance)) - 0.5 * z * z / model.variance
    if isinstance(model, GaussianDiag):
        z = xv - model.mean
        return float(-0.5 * np.sum(LOG_2PI + np.log(model.variance) + z * z / model.variance))
    return float(model.log_density_fn(xv))


def log_density_batch(model: PreChangeModel, X: np.ndarray) -> np.ndarray:
    """Vectorized log q over the rows of X (m, d); returns a length-m array."""
    if isinstance(model, EmpiricalPreChange):
        raise DataError("EmpiricalPreChange has no pointwise density")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.dim:
        raise DataError(f"dimension mismatch: got {X.shape[1]}, model is {model.dim}-d")
    if isinstance(model, Gaussian1D):
        z = X[:, 0] - model.mean
        return -0.5 * (LOG_2PI + math.log(model.variance)) - 0.5 * z * z / model.variance
    if isinstance(model, GaussianDiag):
        z = X - model.mean
        return -0.5 * np.sum(LOG_2PI + np.log(model.variance) + z * z / model.variance, axis=1)
    if model.vectorized:
        return np.asarray(model.log_density_fn(X), dtype=float).reshape(X.shape[0])
    return np.array([float(model.log_density_fn(row)) for row in X])


def draw(model: PreChangeModel, rng: np.random.Generator, count: int) -> np.ndarray:
    """Draw count rows from the model using the caller's generator."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if isinstance(model, Gaussian1D):
        return rng.normal(model.mean, model.sigma, size=(count, 1))
    if isinstance(model, GaussianDiag):
        return model.mean + rng.standard_normal((count, model.dim)) * np.sqrt(model.variance)
    if isinstance(model, GenericDensity):
        out = np.asarray(model.sampler_fn(rng, count), dtype=float)
        return out.reshape(count, model.dim)
    # empirical: uniform with replacement over stored samples
    idx = rng.integers(0, model.samples.shape[0], size=count)
    return model.samples[idx]


def sample(model: PreChangeModel, rng_seed: int, count: int) -> np.ndarray:
    """Seeded i.i.d. draws; deterministic given (model, seed, count)."""
    return draw(model, np.random.default_rng(rng_seed), count)


def model_descriptor(model: PreChangeModel) -> dict:
    """JSON-ready description of a pre-change model (for scorer files)."""
    if isinstance(model, Gaussian1D):
        return {"variant": "gaussian1d", "mean": model.mean, "variance": model.variance}
    if isinstance(model, GaussianDiag):
        return {
            "variant": "gaussian_diag",
            "mean": model.mean.tolist(),
            "variance": model.variance.tolist(),
        }
    if isinstance(model, EmpiricalPreChange):
        return {"variant": "empirical", "samples": model.samples.tolist()}
    raise DataError("GenericDensity models are not serializable (callable density)")


def model_from_descriptor(desc: dict) -> PreChangeModel:
    variant = desc.get("variant")
    if variant == "gaussian1d":
        return Gaussian1D(float(desc["mean"]), float(desc["variance"]))
    if variant == "gaussian_diag":
        return GaussianDiag(np.asarray(desc["mean"], float), np.asarray(desc["variance"], float))
    if variant == "empirical":
        return EmpiricalPreChange(np.asarray(desc["samples"], float))
    raise DataError(f"unknown model variant: {variant!r}")


# ---------------------------------------------------------------------------
# Seed-stream contract
# ---------------------------------------------------------------------------


def trial_rng(base_seed: int, trial_index: int) -> np.random.Generator:
    """Independent substream for one Monte-Carlo trial.

    Derived from SeedSequence((base_seed, trial_index)), so the stream depends
    only on those two integers: results are invariant to worker count and
    scheduling order.
    """
    return np.random.default_rng(np.random.SeedSequence((base_seed, trial_index)))


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def _parse_row(row, width, line_no):
    if width is not None and len(row) != width:
        raise DataError(f"ragged CSV: line {line_no} has {len(row)} fields, expected {width}")
    try:
        return [float(tok) for tok in row]
    except ValueError as exc:
        raise DataError(f"non-numeric CSV field at line {line_no}: {exc}") from None


def read_observations_csv(path) -> np.ndarray:
    """Read one observation per row; optional header; '.' decimal; UTF-8.

    Dimension is inferred from the first data row; ragged rows are a hard
    error. Returns an (n, d) float array.
    """
    if hasattr(path, "read"):
        rows = list(csv.reader(path))
    else:
        try:
            with open(path, newline="", encoding="utf-8") as fh:
                rows = list(csv.reader(fh))
        except OSError as exc:
            raise DataError(f"cannot read CSV {path}: {exc}") from None
    rows = [[tok.strip() for tok in row] for row in rows if row and any(t.strip() for t in row)]
    if not rows:
        raise DataError("CSV contains no data rows")
    start = 0
    try:
        [float(tok) for tok in rows[0]]
    except ValueError:
        start = 1  # header row
    if start >= len(rows):
        raise DataError("CSV contains a header but no data rows")
    width = len(rows[start])
    data = [_parse_row(row, width, i + 1) for i, row in enumerate(rows) if i >= start]
    return np.asarray(data, dtype=float)
