"""Online CuSum state machines: single- and multi-scenario detectors.

Each scenario m keeps its own statistic S^(m), advanced by
S_k = max(S_{k-1}, 0) + llr_m(X_k); the detector stops at the first k where
max_m S_k^(m) crosses the threshold b, reporting the argmax scenario (lowest
index on ties). Scorers are shared read-only; a DetectorState is owned by one
stream.

Two scorer kinds plug in: llr providers (an `llr(x)` method, optionally a
vectorized `llr_batch`) feed the recursion above; direct-statistic providers
(a stateful `statistic(x)` method, e.g. the windowed NGLR baseline) replace
the recursion with their own statistic value each step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from . import kernels
from .distributions import DataError, as_coords

__all__ = [
    "ScenarioScorer",
    "DetectorState",
    "StreamResult",
    "new_state",
    "cusum_step",
    "advance",
    "threshold_for_mtfa",
    "run_stream",
    "alarm_record",
]


@dataclass(frozen=True)
class ScenarioScorer:
    """Scenario index (1..M, unique) plus any per-sample statistic provider."""

    id: int
    scorer: object

    def __post_init__(self):
        if not (isinstance(self.id, int) and self.id >= 1):
            raise ValueError(f"scenario id must be a positive integer, got {self.id!r}")
        if not (hasattr(self.scorer, "llr") or hasattr(self.scorer, "statistic")):
            raise TypeError("scorer must expose llr(x) or statistic(x)")


def _check_scorers(scorers: Sequence[ScenarioScorer]) -> List[ScenarioScorer]:
    scorers = list(scorers)
    if not scorers:
        raise ValueError("need at least one scenario scorer")
    ids = [s.id for s in scorers]
    if sorted(ids) != list(range(1, len(ids) + 1)):
        raise ValueError(f"scenario ids must be exactly 1..M without gaps, got {ids}")
    return scorers


@dataclass(frozen=True)
class DetectorState:
    stats: np.ndarray
    step: int
    threshold_b: float
    stopped_at: Optional[int] = None
    argmax_scenario: Optional[int] = None

    def __post_init__(self):
        arr = np.atleast_1d(np.asarray(self.stats, dtype=float)).copy()
        arr.flags.writeable = False
        object.__setattr__(self, "stats", arr)

    @property
    def stopped(self) -> bool:
        return self.stopped_at is not None


def new_state(threshold_b: float, n_scenarios: int) -> DetectorState:
    if n_scenarios < 1:
        raise ValueError("need at least one scenario")
    return DetectorState(stats=np.zeros(n_scenarios), step=0, threshold_b=float(threshold_b))


def cusum_step(S_prev: float, llr_value: float) -> float:
    """One recursion step: positive part, then add the increment."""
    if not math.isfinite(llr_value):
        raise ValueError(f"non-finite llr value: {llr_value!r}")
    return max(S_prev, 0.0) + llr_value


def advance(state: DetectorState, x, scorers: Sequence[ScenarioScorer]) -> DetectorState:
    """Feed one observation to every scenario; set the stop fields on crossing."""
    scorers = _check_scorers(scorers)
    if state.stopped:
        raise RuntimeError("detector already stopped; create a fresh state")
    if state.stats.size != len(scorers):
        raise ValueError(f"state tracks {state.stats.size} scenarios, got {len(scorers)} scorers")
    xv = as_coords(x)
    stats = np.empty(len(scorers))
    for j, sc in enumerate(scorers):
        if hasattr(sc.scorer, "llr"):
            stats[j] = cusum_step(float(state.stats[j]), float(sc.scorer.llr(xv)))
        else:
            val = float(sc.scorer.statistic(xv))
            if not math.isfinite(val):
                raise ValueError(f"non-finite statistic from scenario {sc.id}")
            stats[j] = val
    k = state.step + 1
    if float(np.max(stats)) >= state.threshold_b:
        j = int(np.argmax(stats))  # lowest index on ties
        return DetectorState(stats=stats, step=k, threshold_b=state.threshold_b,
                             stopped_at=k, argmax_scenario=scorers[j].id)
    return DetectorState(stats=stats, step=k, threshold_b=state.threshold_b)


def threshold_for_mtfa(gamma: float, M: int) -> float:
    """Threshold log(M * gamma): the M-scenario test then has MTFA >= gamma."""
    if not (gamma > 1):
        raise ValueError(f"gamma must exceed 1, got {gamma}")
    if not (isinstance(M, (int, np.integer)) and M >= 1):
        raise ValueError(f"M must be a positive integer, got {M!r}")
    return math.log(M * gamma)


@dataclass(frozen=True)
class StreamResult:
    """Outcome of running a finite stream: stopped, censored at the cap, or
    exhausted (stream ended before both). Never conflated."""

    status: str                       # "stopped" | "censored" | "exhausted"
    stopping_time: Optional[int]      # 1-based step of the alarm, if stopped
    argmax_scenario: Optional[int]
    final_stats: np.ndarray
    steps_consumed: int


def _batch_llrs(scorers, X: np.ndarray) -> Optional[np.ndarray]:
    if not all(hasattr(s.scorer, "llr_batch") for s in scorers):
        return None
    out = np.empty((len(scorers), X.shape[0]))
    for j, sc in enumerate(scorers):
        out[j] = sc.scorer.llr_batch(X)
    if not np.all(np.isfinite(out)):
        raise ValueError("non-finite llr value in batch evaluation")
    return out


def run_stream(scorers: Sequence[ScenarioScorer], b: float, stream, cap: int) -> StreamResult:
    """Consume observations until the statistic crosses b, the cap is hit, or
    the stream ends, in that priority order at each step."""
    scorers = _check_scorers(scorers)
    if not (isinstance(cap, (int, np.integer)) and cap >= 1):
        raise ValueError(f"cap must be a positive integer, got {cap!r}")
    for sc in scorers:
        if hasattr(sc.scorer, "reset"):
            sc.scorer.reset()

    if isinstance(stream, np.ndarray):
        X = stream if stream.ndim == 2 else stream[:, None]
        avail = X.shape[0]
        use = min(avail, cap)
        llrs = _batch_llrs(scorers, X[:use])
        if llrs is not None:
            k, jmax, stats = kernels.multi_cusum_run(
                np.ascontiguousarray(llrs), float(b), np.zeros(len(scorers)))
            if k >= 0:
                return StreamResult("stopped", k + 1, scorers[jmax].id,
                                    np.asarray(stats), k + 1)
            status = "censored" if avail >= cap else "exhausted"
            return StreamResult(status, None, None, np.asarray(stats), use)
        stream = iter(X)

    state = new_state(b, len(scorers))
    consumed = 0
    for x in stream:
        state = advance(state, x, scorers)
        consumed += 1
        if state.stopped:
            return StreamResult("stopped", state.stopped_at, state.argmax_scenario,
                                state.stats, consumed)
        if consumed >= cap:
            return StreamResult("censored", None, None, state.stats, consumed)
    return StreamResult("exhausted", None, None, state.stats, consumed)


def alarm_record(result: StreamResult) -> dict:
    """JSON-ready alarm or censoring record."""
    return {
        "status": result.status,
        "stopping_time": result.stopping_time,
        "argmax_scenario": result.argmax_scenario,
        "final_stats": [float(v) for v in np.atleast_1d(result.final_stats)],
        "steps_consumed": result.steps_consumed,
    }
