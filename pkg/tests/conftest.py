"""Shared helpers for the test suite."""
from __future__ import annotations

import numpy as np
import pytest

from drcusum import EmpiricalDistribution, Gaussian1D


@pytest.fixture(scope="session")
def std_normal():
    return Gaussian1D(0.0, 1.0)


def training_from(mean: float, var: float, n: int, seed: int) -> EmpiricalDistribution:
    rng = np.random.default_rng(seed)
    return EmpiricalDistribution(rng.normal(mean, np.sqrt(var), size=(n, 1)))


class ConstantScorer:
    """Per-sample log-likelihood ratio identically equal to a constant."""

    def __init__(self, value: float):
        self.value = float(value)

    def llr(self, x) -> float:
        return self.value

    def llr_batch(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.full(X.shape[0], self.value)
