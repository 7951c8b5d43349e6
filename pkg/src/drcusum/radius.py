"""Wasserstein distances and the radius-selection calculus.

Exact discrete optimal transport at desk scale (assignment when both sides
are uniform with equal size, a dense transportation LP otherwise), the
concentration constants gamma_s and T_s(c), and the closed-form bounds that
turn a sample budget and a confidence level into a usable radius interval.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog

from .distributions import (
    CostMetric,
    DataError,
    EmpiricalDistribution,
    Gaussian1D,
    GaussianDiag,
    PreChangeModel,
    cost_power_matrix,
    draw,
)

__all__ = [
    "TransportConstant",
    "RadiusReport",
    "InfeasibleError",
    "gamma_s",
    "ts_constant",
    "wasserstein_discrete",
    "wasserstein_1d_sorted",
    "wasserstein_to_prechange",
    "radius_lower_bound",
    "radius_upper_bound",
    "min_samples",
    "wadd_upper_bound",
    "radius_report",
]

_ATOM_GUARD = 512


class InfeasibleError(ValueError):
    """A bound's precondition fails (e.g. the delay bound's denominator)."""


def gamma_s(s: float) -> float:
    """Concentration exponent constant: 1 on [1,2), 3-2*sqrt(2) at s=2."""
    if not (1.0 <= s <= 2.0):
        raise ValueError(f"order s must lie in [1,2] for concentration bounds, got {s}")
    return 1.0 if s < 2.0 else 3.0 - 2.0 * math.sqrt(2.0)


@dataclass(frozen=True)
class TransportConstant:
    """Constant c of a transportation-cost inequality W_s <= sqrt(2c KL)."""

    c: float
    source: str = "user"

    def __post_init__(self):
        if not (self.c > 0 and math.isfinite(self.c)):
            raise ValueError(f"transport constant must be positive, got {self.c}")
        if self.source not in ("hamming_t1", "gaussian_t2", "user"):
            raise ValueError(f"unknown source {self.source!r}")


def ts_constant(model: Union[PreChangeModel, str, float]) -> TransportConstant:
    """Transportation-cost constant for the supported families.

    Discrete/Hamming ground metric: c = 1/4 (order 1). Gaussians with unit
    variances: c = 1 (order 2, the tabled constant). Other diagonal Gaussians:
    c = max variance / 2, i.e. 1/(2*kappa) with kappa the smallest inverse
    variance. Note the two Gaussian rules disagree at unit variance (the
    tabled value is 1, the general rule gives 1/2); the tabled value wins
    there by convention. Anything else needs a user-supplied constant.
    """
    if isinstance(model, str):
        key = model.strip().lower()
        if key in ("hamming", "discrete"):
            return TransportConstant(0.25, "hamming_t1")
        raise ValueError(f"unsupported family {model!r}: supply a numeric constant")
    if isinstance(model, (int, float)) and not isinstance(model, bool):
        return TransportConstant(float(model), "user")
    if isinstance(model, Gaussian1D):
        var_max = model.variance
        all_unit = model.variance == 1.0
    elif isinstance(model, GaussianDiag):
        var_max = float(np.max(model.variance))
        all_unit = bool(np.all(model.variance == 1.0))
    else:
        raise ValueError(
            f"no tabled transport constant for {type(model).__name__}; supply one")
    return TransportConstant(1.0 if all_unit else var_max / 2.0, "gaussian_t2")


def _as_atoms(d) -> np.ndarray:
    if isinstance(d, EmpiricalDistribution):
        return d.samples
    arr = np.asarray(d, dtype=float)
    return arr[:, None] if arr.ndim == 1 else arr


def wasserstein_discrete(A, B, metric: CostMetric) -> float:
    """Exact order-s Wasserstein distance between two uniform atom sets.

    Equal sizes reduce to a linear assignment; unequal sizes solve the dense
    transportation LP on the atom grid. Returns the s-th root of the optimal
    mean transport cost.
    """
    a, b = _as_atoms(A), _as_atoms(B)
    if a.shape[1] != b.shape[1]:
        raise DataError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] > _ATOM_GUARD or b.shape[0] > _ATOM_GUARD:
        raise ValueError(f"atom sets exceed the exact-solver guard ({_ATOM_GUARD})")
    cost = cost_power_matrix(metric, a, b)
    na, nb = cost.shape
    if na == nb:
        rows, cols = linear_sum_assignment(cost)
        value = float(cost[rows, cols].mean())
    else:
        # transportation LP: rows supply 1/na, columns demand 1/nb
        c = cost.reshape(-1)
        arow = np.zeros((na, na * nb))
        for i in range(na):
            arow[i, i * nb:(i + 1) * nb] = 1.0
        acol = np.zeros((nb, na * nb))
        for j in range(nb):
            acol[j, j::nb] = 1.0
        a_eq = np.vstack([arow, acol[:-1]])  # last demand row is redundant
        b_eq = np.concatenate([np.full(na, 1.0 / na), np.full(nb - 1, 1.0 / nb)])
        res = linprog(c, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
        if not res.success:
            raise RuntimeError(f"transportation LP failed: {res.message}")
        value = float(res.fun)
    value = max(value, 0.0)
    return value ** (1.0 / metric.order_s)


def wasserstein_1d_sorted(A, B, s: float) -> float:
    """Classical quantile coupling in one dimension: sort, match, average.

    Independent of the LP machinery on purpose; must agree with
    wasserstein_discrete exactly on equal-size uniform 1-d inputs.
    """
    a, b = _as_atoms(A), _as_atoms(B)
    if a.shape[1] != 1 or b.shape[1] != 1:
        raise DataError("sorted matching is 1-d only")
    if a.shape[0] != b.shape[0]:
        raise DataError("sorted matching needs equal-size uniform atom sets")
    av = np.sort(a[:, 0])
    bv = np.sort(b[:, 0])
    return float(np.mean(np.abs(av - bv) ** s) ** (1.0 / s))


def wasserstein_to_prechange(Q: PreChangeModel, Pn: EmpiricalDistribution,
                             metric: CostMetric, mc_size: int, seed: int) -> float:
    """Monte-Carlo estimate of W_s(Q, empirical) by exact discrete transport.

    Draws mc_size Q-samples (a positive multiple of n so the problem reduces
    to an equal-size assignment after atom duplication); deterministic given
    the seed.
    """
    n = Pn.n
    if not (isinstance(mc_size, (int, np.integer)) and mc_size >= n and mc_size % n == 0):
        raise ValueError(f"mc_size must be a positive multiple of n={n}, got {mc_size}")
    if mc_size > _ATOM_GUARD:
        raise ValueError(f"mc_size {mc_size} exceeds the exact-solver guard ({_ATOM_GUARD})")
    qs = draw(Q, np.random.default_rng(seed), mc_size)
    tiled = np.repeat(Pn.samples, mc_size // n, axis=0)
    return wasserstein_discrete(qs, tiled, metric)


def gaussian_w2(mu0, sigma0, mu1, sigma1) -> float:
    """Closed-form order-2 distance between two Gaussians with scalar spread:
    sqrt((mu1-mu0)^2 + (sigma1-sigma0)^2). Test reference."""
    dmu = float(np.linalg.norm(np.atleast_1d(mu1) - np.atleast_1d(mu0)))
    return math.sqrt(dmu ** 2 + (sigma1 - sigma0) ** 2)


def _check_delta(delta: float):
    if not (0.0 < delta < 1.0):
        raise ValueError(f"delta must lie in (0,1), got {delta}")


def radius_lower_bound(delta: float, tc: TransportConstant, s: float, n: int) -> float:
    """Smallest radius at which the ball still holds the truth w.p. 1-delta:
    sqrt(2 |log delta| c / (gamma_s n))."""
    _check_delta(delta)
    if not (isinstance(n, (int, np.integer)) and n >= 1):
        raise ValueError(f"n must be a positive integer, got {n!r}")
    return math.sqrt(2.0 * abs(math.log(delta)) * tc.c / (gamma_s(s) * n))


def radius_upper_bound(wpq: float, delta: float, tc: TransportConstant,
                       s: float, n: int) -> float:
    """Largest radius that keeps the pre-change law out of the ball w.p.
    1-delta: W_s(P,Q) minus the lower bound. May be negative (infeasible n)."""
    return wpq - radius_lower_bound(delta, tc, s, n)


def min_samples(delta: float, tc: TransportConstant, s: float, wpq: float) -> float:
    """Sample floor 8 |log delta| c / (gamma_s W^2); at n equal to it the
    radius interval closes to a point."""
    _check_delta(delta)
    if not (wpq > 0):
        raise ValueError(f"need a positive between-distribution distance, got {wpq}")
    return 8.0 * abs(math.log(delta)) * tc.c / (gamma_s(s) * wpq * wpq)


def wadd_upper_bound(gamma: float, tc: TransportConstant, wpq: float, radius: float) -> float:
    """First-order worst-case delay bound 2 c log(gamma) / (W - 2r)^2."""
    if not (gamma > 1):
        raise ValueError(f"gamma must exceed 1, got {gamma}")
    denom = wpq - 2.0 * radius
    if denom <= 0:
        raise InfeasibleError(
            f"delay bound infeasible: W - 2r = {denom} <= 0 (radius too large)")
    return 2.0 * tc.c * math.log(gamma) / (denom * denom)


@dataclass(frozen=True)
class RadiusReport:
    lower: float
    upper: float
    n_min: float
    empirical_cap: float
    feasible: bool

    def to_json_dict(self) -> dict:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "n_min": self.n_min,
            "empirical_cap": self.empirical_cap,
            "feasible": self.feasible,
        }


def radius_report(Q: PreChangeModel, Pn: EmpiricalDistribution, delta: float,
                  tc: TransportConstant, s: float, wpq_estimate: float,
                  mc_size: Optional[int] = None, seed: int = 0) -> RadiusReport:
    """Assemble the full radius picture for one training set.

    The empirical cap is the estimated distance from the pre-change law to the
    training atoms (a radius at or past it would swallow Q); feasible means
    the lower bound clears both the upper bound and that cap.
    """
    n = Pn.n
    lower = radius_lower_bound(delta, tc, s, n)
    upper = radius_upper_bound(wpq_estimate, delta, tc, s, n)
    nmin = min_samples(delta, tc, s, wpq_estimate)
    if mc_size is None:
        mc_size = n * max(1, _ATOM_GUARD // n)
    cap = wasserstein_to_prechange(Q, Pn, CostMetric(order_s=s), mc_size, seed)
    feasible = lower <= min(upper, cap)
    return RadiusReport(lower=lower, upper=upper, n_min=nmin,
                        empirical_cap=cap, feasible=bool(feasible))
