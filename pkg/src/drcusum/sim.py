"""Monte-Carlo harness: run-length estimation, threshold calibration, and the
operating-characteristic / divergence-vs-radius experiment recipes.

Trials are independent; each derives its own generator from (base_seed,
trial_index) so results do not depend on worker count or scheduling. Streams
are drawn in fixed-size chunks; numpy generators hand out values one draw at a
time, so chunking never changes the sample path.

The curve runners avoid re-simulating per threshold: one pass over a stream
collects the running-max records of the detection path (strictly increasing
(time, value) pairs), and the stopping time for any threshold b is then the
first record with value >= b. An estimate built this way is exactly what the
step-by-step detector would report.
"""
from __future__ import annotations

import dataclasses
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import __version__ as _pkg_version
from .detector import ScenarioScorer, run_stream, threshold_for_mtfa
from .distributions import (
    DataError,
    EmpiricalDistribution,
    PreChangeModel,
    draw,
    model_descriptor,
    model_from_descriptor,
    trial_rng,
)
from .kernels import BACKEND, cusum_path
from .lfd import CostMetric, fit_lfd_scorer

__all__ = [
    "TrialPlan",
    "Estimate",
    "OcPoint",
    "ExperimentConfig",
    "derive_seed",
    "estimate_mtfa",
    "estimate_wadd",
    "calibrate_threshold",
    "crossing_records",
    "build_detector",
    "run_oc_curve",
    "run_kl_curve",
    "write_rows_csv",
]

_CHUNK = 8192


def derive_seed(base_seed: int, tag: int) -> int:
    """Stable 32-bit sub-seed for a named purpose (training draw, MTFA trials,
    delay trials, ...) so the purposes never share a substream."""
    return int(np.random.SeedSequence((int(base_seed), int(tag))).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Plans and estimates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrialPlan:
    """One batch of i.i.d. trials for a fixed detector and stream law.

    change_point=None runs the pre-change law forever (false-alarm trials);
    change_point=v >= 1 switches to p_model starting at step v. cap censors
    trials that never cross the threshold.
    """

    scorers: tuple
    threshold_b: float
    q_model: PreChangeModel
    p_model: Optional[PreChangeModel] = None
    change_point: Optional[int] = None
    trials: int = 200
    cap: int = 100000
    base_seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if self.cap < 1:
            raise ValueError(f"cap must be >= 1, got {self.cap}")
        if self.change_point is not None:
            if self.p_model is None:
                raise ValueError("change_point given without a post-change model")
            if self.change_point < 1:
                raise ValueError(f"change_point must be >= 1, got {self.change_point}")
        if not math.isfinite(self.threshold_b):
            raise ValueError("threshold must be finite")
        object.__setattr__(self, "scorers", tuple(self.scorers))


@dataclass(frozen=True)
class Estimate:
    """Mean stopping quantity with its standard error and the censoring tally.
    Censored trials enter the mean at the cap, so a censored MTFA estimate is
    a lower bound; they are never dropped."""

    value: float
    se: float
    censored: int
    trials: int
    cap: int
    metadata: dict = field(default_factory=dict)

    @property
    def all_censored(self) -> bool:
        return self.censored == self.trials

    def label(self) -> str:
        return f"> {self.cap}" if self.all_censored else f"{self.value:.6g}"


def _stream_chunk(plan: TrialPlan, rng: np.random.Generator, pos: int, count: int) -> np.ndarray:
    """Rows pos..pos+count-1 (0-based) of the trial stream: q before the
    change point, p from it onward."""
    if plan.change_point is None:
        return draw(plan.q_model, rng, count)
    pre = max(0, min(count, (plan.change_point - 1) - pos))
    parts = []
    if pre:
        parts.append(draw(plan.q_model, rng, pre))
    if count - pre:
        parts.append(draw(plan.p_model, rng, count - pre))
    return parts[0] if len(parts) == 1 else np.vstack(parts)


def _all_batch(scorers) -> bool:
    return all(hasattr(s.scorer, "llr_batch") for s in scorers)


def _single_run(plan: TrialPlan, rng: np.random.Generator) -> int:
    """Stopping time (1-based) of one trial, or plan.cap+1 when censored.
    Early exit: stops generating as soon as the threshold is crossed."""
    if _all_batch(plan.scorers):
        from .kernels import multi_cusum_run

        carries = np.zeros(len(plan.scorers))
        pos = 0
        while pos < plan.cap:
            count = min(_CHUNK, plan.cap - pos)
            X = _stream_chunk(plan, rng, pos, count)
            llrs = np.ascontiguousarray(
                np.stack([s.scorer.llr_batch(X) for s in plan.scorers]))
            idx, _, carries = multi_cusum_run(llrs, float(plan.threshold_b), carries)
            if idx >= 0:
                return pos + idx + 1
            carries = np.asarray(carries, dtype=float)
            pos += count
        return plan.cap + 1
    # direct-statistic or scalar-only scorers: step one sample at a time
    for s in plan.scorers:
        if hasattr(s.scorer, "reset"):
            s.scorer.reset()
    stats = np.zeros(len(plan.scorers))
    pos = 0
    while pos < plan.cap:
        count = min(_CHUNK, plan.cap - pos)
        X = _stream_chunk(plan, rng, pos, count)
        for r in range(count):
            x = X[r]
            for m, s in enumerate(plan.scorers):
                if hasattr(s.scorer, "llr"):
                    stats[m] = max(stats[m], 0.0) + s.scorer.llr(x)
                else:
                    stats[m] = s.scorer.statistic(x)
            if stats.max() >= plan.threshold_b:
                return pos + r + 1
        pos += count
    return plan.cap + 1


def _taus_block(plan: TrialPlan, indices: Sequence[int]) -> list:
    return [_single_run(plan, trial_rng(plan.base_seed, i)) for i in indices]


def _collect_taus(plan: TrialPlan) -> np.ndarray:
    idx = list(range(plan.trials))
    if plan.n_jobs <= 1 or plan.trials < 2 * plan.n_jobs:
        taus = _taus_block(plan, idx)
    else:
        blocks = np.array_split(np.asarray(idx), plan.n_jobs)
        with ProcessPoolExecutor(max_workers=plan.n_jobs) as pool:
            parts = list(pool.map(_taus_block, [plan] * len(blocks),
                                  [b.tolist() for b in blocks]))
        taus = [t for part in parts for t in part]
    return np.asarray(taus, dtype=float)


def _summarize(raw: np.ndarray, cap: int, metadata: dict) -> Estimate:
    censored = int(np.count_nonzero(raw > cap))
    vals = np.minimum(raw, cap)
    se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else float("nan")
    return Estimate(value=float(vals.mean()), se=se, censored=censored,
                    trials=int(raw.size), cap=cap, metadata=metadata)


def estimate_mtfa(plan: TrialPlan) -> Estimate:
    """Mean time to false alarm under the pre-change law."""
    if plan.change_point is not None:
        raise ValueError("MTFA trials must run the pre-change law only "
                         "(change_point must be None)")
    return _summarize(_collect_taus(plan), plan.cap, {"kind": "mtfa"})


def estimate_wadd(plan: TrialPlan) -> Estimate:
    """Mean detection delay for a change at plan.change_point (delay counted
    as tau - change_point + 1; the immediate-change convention v=1 is the
    worst case for the CuSum recursions used here)."""
    if plan.change_point is None:
        raise ValueError("delay trials need a change_point")
    meta = {"kind": "wadd", "change_point": plan.change_point}
    if any(not hasattr(s.scorer, "llr") for s in plan.scorers):
        meta["caveat"] = ("window-limited statistics are not worst-case at a "
                          "fixed change point; this is the v=%d delay only"
                          % plan.change_point)
    raw = _collect_taus(plan) - (plan.change_point - 1)
    return _summarize(raw, plan.cap - (plan.change_point - 1), meta)


# ---------------------------------------------------------------------------
# Running-max records: one pass, every threshold
# ---------------------------------------------------------------------------


def _detection_path(plan: TrialPlan, rng: np.random.Generator, cap: int) -> np.ndarray:
    """Full path of max_m S_m(k) for k=1..cap (no early exit)."""
    if _all_batch(plan.scorers):
        carries = np.zeros(len(plan.scorers))
        out = np.empty(cap)
        pos = 0
        while pos < cap:
            count = min(_CHUNK, cap - pos)
            X = _stream_chunk(plan, rng, pos, count)
            paths = np.empty((len(plan.scorers), count))
            for m, s in enumerate(plan.scorers):
                llr = np.ascontiguousarray(s.scorer.llr_batch(X), dtype=float)
                paths[m] = cusum_path(llr, carries[m])
                carries[m] = paths[m][-1]
            out[pos:pos + count] = paths.max(axis=0)
            pos += count
        return out
    for s in plan.scorers:
        if hasattr(s.scorer, "reset"):
            s.scorer.reset()
    stats = np.zeros(len(plan.scorers))
    out = np.empty(cap)
    pos = 0
    while pos < cap:
        count = min(_CHUNK, cap - pos)
        X = _stream_chunk(plan, rng, pos, count)
        for r in range(count):
            for m, s in enumerate(plan.scorers):
                if hasattr(s.scorer, "llr"):
                    stats[m] = max(stats[m], 0.0) + s.scorer.llr(X[r])
                else:
                    stats[m] = s.scorer.statistic(X[r])
            out[pos + r] = stats.max()
        pos += count
    return out


def crossing_records(plan: TrialPlan, trial_index: int, cap: Optional[int] = None):
    """(times, values) of the strictly increasing running-max records of one
    trial's detection path. For any threshold b, the stopping time is
    times[searchsorted(values, b)] (censored at cap when b exceeds them all).
    """
    cap = plan.cap if cap is None else cap
    path = _detection_path(plan, trial_rng(plan.base_seed, trial_index), cap)
    runmax = np.maximum.accumulate(path)
    prev = np.concatenate(([-np.inf], runmax[:-1]))
    mask = runmax > prev
    times = np.nonzero(mask)[0] + 1  # 1-based
    return times.astype(np.int64), runmax[mask]


def _tau_from_records(times: np.ndarray, values: np.ndarray, b: float, cap: int) -> float:
    idx = int(np.searchsorted(values, b, side="left"))
    return float(times[idx]) if idx < times.size else float(cap + 1)


def _records_batch(plan: TrialPlan) -> list:
    idx = list(range(plan.trials))
    if plan.n_jobs <= 1 or plan.trials < 2 * plan.n_jobs:
        return [crossing_records(plan, i) for i in idx]
    blocks = np.array_split(np.asarray(idx), plan.n_jobs)
    with ProcessPoolExecutor(max_workers=plan.n_jobs) as pool:
        parts = list(pool.map(_records_block, [plan] * len(blocks),
                              [b.tolist() for b in blocks]))
    return [rec for part in parts for rec in part]


def _records_block(plan: TrialPlan, indices: Sequence[int]) -> list:
    return [crossing_records(plan, i) for i in indices]


def _grid_estimates(records: list, b_grid: np.ndarray, cap: int,
                    shift: int = 0) -> list:
    """One Estimate per threshold from a shared set of trial records."""
    out = []
    for b in b_grid:
        raw = np.asarray([_tau_from_records(t, v, float(b), cap) for t, v in records])
        out.append(_summarize(raw - shift, cap - shift, {}))
    return out


def calibrate_threshold(scorers, q_model: PreChangeModel, target_mtfa: float,
                        bracket: Optional[tuple] = None, trials: int = 200,
                        cap: Optional[int] = None, base_seed: int = 0,
                        n_jobs: int = 1, tol_rel: float = 0.1) -> float:
    """Threshold whose estimated MTFA matches the target within tol_rel.

    Bisects on b using one set of per-trial crossing records, so every
    candidate threshold is evaluated on the same streams. The analytic warm
    start log(M * target) seeds the bracket when none is given. If the target
    is outside what the bracket can reach, the nearer endpoint is returned
    with a warning.
    """
    import warnings

    if target_mtfa <= 1:
        raise ValueError("target MTFA must exceed 1")
    cap = int(cap if cap is not None else max(50 * target_mtfa, 1000))
    scorers = tuple(scorers)
    if bracket is None:
        warm = threshold_for_mtfa(target_mtfa, len(scorers))
        bracket = (max(warm - 4.0, 1e-3), warm + 4.0)
    lo, hi = float(bracket[0]), float(bracket[1])
    if not lo < hi:
        raise ValueError(f"bad bracket {bracket}")
    plan = TrialPlan(scorers=scorers, threshold_b=hi, q_model=q_model,
                     trials=trials, cap=cap, base_seed=base_seed, n_jobs=n_jobs)
    records = _records_batch(plan)

    def mtfa_at(b: float) -> float:
        raw = np.asarray([_tau_from_records(t, v, b, cap) for t, v in records])
        return float(np.minimum(raw, cap).mean())

    f_lo, f_hi = mtfa_at(lo), mtfa_at(hi)
    if f_lo >= target_mtfa:
        warnings.warn(f"bracket floor b={lo:.4g} already gives MTFA {f_lo:.4g} "
                      f">= target {target_mtfa:.4g}; returning the floor")
        return lo
    if f_hi < target_mtfa:
        warnings.warn(f"bracket ceiling b={hi:.4g} reaches MTFA {f_hi:.4g} "
                      f"< target {target_mtfa:.4g}; returning the ceiling")
        return hi
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if mtfa_at(mid) >= target_mtfa:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-9 * (1.0 + abs(hi)):
            break
    b = hi  # smallest bracketed b meeting the target
    achieved = mtfa_at(b)
    if abs(achieved - target_mtfa) > tol_rel * target_mtfa:
        warnings.warn(f"calibrated b={b:.4g} reaches MTFA {achieved:.4g}, "
                      f"outside {tol_rel:.0%} of target {target_mtfa:.4g} "
                      "(run-length distribution is discrete)")
    return float(b)


# ---------------------------------------------------------------------------
# Experiment recipes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OcPoint:
    """One operating-characteristic point: a detector at a threshold, with
    MTFA and delay estimates aggregated over training sets. Standard errors
    come from trial variance for a single set and from between-set variance
    of set means otherwise; censored counts both estimates, never dropped."""

    detector: str
    b: float
    mtfa: float
    mtfa_se: float
    wadd: float
    wadd_se: float
    censored: int
    radius: Optional[float]
    n: Optional[int]
    seed: int

    def to_row(self) -> dict:
        return {k: getattr(self, k) for k in (
            "detector", "b", "mtfa", "mtfa_se", "wadd", "wadd_se",
            "censored", "radius", "n", "seed")}


@dataclass(frozen=True)
class ExperimentConfig:
    """Serializable recipe for the curve runners.

    detectors is a tuple of specs: {"kind": "exact"}, {"kind": "mle"},
    {"kind": "dr", "radius": r}, or {"kind": "nglr", "window": W}. Training
    sets are drawn from the post-change model; "exact" ignores them.
    """

    name: str
    q: dict
    p: Optional[dict] = None
    detectors: tuple = ()
    n_train: int = 25
    training_sets: int = 1
    thresholds: tuple = ()
    radius_grid: tuple = ()
    order_s: float = 2.0
    mtfa_trials: int = 200
    wadd_trials: int = 400
    mtfa_cap: int = 200000
    wadd_cap: int = 20000
    base_seed: int = 7
    n_jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "detectors", tuple(self.detectors))
        object.__setattr__(self, "thresholds", tuple(float(b) for b in self.thresholds))
        object.__setattr__(self, "radius_grid", tuple(float(r) for r in self.radius_grid))
        if self.n_train < 1 or self.training_sets < 1:
            raise ValueError("n_train and training_sets must be >= 1")

    def to_json_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["detectors"] = [dict(s) for s in self.detectors]
        d["thresholds"] = list(self.thresholds)
        d["radius_grid"] = list(self.radius_grid)
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise DataError(f"unknown config fields: {sorted(extra)}")
        d = dict(d)
        for key in ("q", "p"):
            if d.get(key) is not None and not isinstance(d[key], dict):
                raise DataError(
                    f"config field {key!r} must be a model descriptor dict, "
                    f"got {type(d[key]).__name__}")
        for key in ("detectors", "thresholds", "radius_grid"):
            if key in d:
                d[key] = tuple(d[key])
        for spec in d.get("detectors", ()):
            if not isinstance(spec, dict):
                raise DataError(f"detector specs must be dicts, got {spec!r}")
            _detector_label(spec)
        return cls(**d)


def _detector_label(spec: dict) -> str:
    kind = spec.get("kind")
    names = {"exact": "exact_cusum", "mle": "gaussian_mle",
             "dr": "dr_cusum", "nglr": "nglr"}
    if kind not in names:
        raise DataError(f"unknown detector kind: {kind!r}")
    return names[kind]


def build_detector(spec: dict, q_model: PreChangeModel, p_model,
                   training: Optional[EmpiricalDistribution],
                   order_s: float = 2.0) -> tuple:
    """(scorers tuple, label, radius-or-None) for one detector spec."""
    from .baselines import (ExactLlrScorer, GaussianMleScorer, KdeConfig,
                            NglrScorer, bandwidth_rule, fit_gaussian_mle)

    kind = spec.get("kind")
    label = _detector_label(spec)
    if kind == "exact":
        if p_model is None:
            raise DataError("exact detector needs the post-change model")
        return (ScenarioScorer(1, ExactLlrScorer(q_model, p_model)),), label, None
    if training is None:
        raise DataError(f"{label} needs a training set")
    if kind == "mle":
        fit = fit_gaussian_mle(training)
        return (ScenarioScorer(1, GaussianMleScorer(q_model, fit)),), label, None
    if kind == "dr":
        radius = float(spec["radius"])
        metric = CostMetric(order_s=order_s)
        scorer = fit_lfd_scorer(q_model, metric, training, radius)
        return (ScenarioScorer(1, scorer),), label, radius
    # nglr
    window = int(spec.get("window", 50))
    if "bandwidths" in spec:
        h = np.asarray(spec["bandwidths"], float)
    else:
        h = bandwidth_rule(window, training.dim, training.samples)
    cfg = KdeConfig(bandwidths=h, window=window)
    return (ScenarioScorer(1, NglrScorer(q_model, training, cfg)),), label, None


def _float_repr(v) -> str:
    return repr(float(v))


def write_rows_csv(path: str, fieldnames: Sequence[str], rows: Sequence[dict]) -> None:
    """Atomic CSV write with reproducible float formatting (shortest
    round-trip repr): same rows in, identical bytes out."""
    import csv

    tmp = f"{path}.tmp.{os.getpid()}"
    try:
        with open(tmp, "w", newline="\n") as fh:
            w = csv.DictWriter(fh, fieldnames=list(fieldnames))
            w.writeheader()
            for row in rows:
                rec = {}
                for k in fieldnames:
                    v = row[k]
                    if v is None:
                        rec[k] = ""
                    elif isinstance(v, (float, np.floating)):
                        rec[k] = _float_repr(v)
                    else:
                        rec[k] = v
                w.writerow(rec)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_manifest(path: str, config: ExperimentConfig, outputs: dict) -> None:
    payload = {
        "config": config.to_json_dict(),
        "package": {"name": "drcusum", "version": _pkg_version,
                    "kernel_backend": BACKEND},
        "outputs": outputs,
    }
    tmp = f"{path}.tmp.{os.getpid()}"
    try:
        with open(tmp, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


_TAG_TRAIN = 1
_TAG_MTFA = 2
_TAG_WADD = 3


def _resolve_model(spec):
    """Config models are descriptor dicts; already-built model objects are
    accepted for programmatic recipes (they just cannot be serialized)."""
    return model_from_descriptor(spec) if isinstance(spec, dict) else spec


def _training_sets(config: ExperimentConfig, p_model) -> list:
    out = []
    for t in range(config.training_sets):
        rng = trial_rng(derive_seed(config.base_seed, _TAG_TRAIN), t)
        out.append(EmpiricalDistribution(draw(p_model, rng, config.n_train)))
    return out


def run_oc_curve(config: ExperimentConfig, csv_path: Optional[str] = None,
                 manifest_path: Optional[str] = None) -> list:
    """Operating characteristic over the config's threshold grid.

    For each detector and training set, one false-alarm records pass and one
    delay records pass cover every threshold; the same stream substreams are
    reused across detectors, so comparisons are paired. Returns the OcPoint
    list (also written as CSV when csv_path is given).
    """
    if not config.thresholds:
        raise DataError("config.thresholds is empty")
    if not config.detectors:
        raise DataError("config.detectors is empty")
    q_model = _resolve_model(config.q)
    p_model = _resolve_model(config.p) if config.p is not None else None
    if p_model is None:
        raise DataError("operating-characteristic runs need a post-change model")
    trainings = _training_sets(config, p_model)
    b_grid = np.asarray(config.thresholds, dtype=float)
    seed_mtfa = derive_seed(config.base_seed, _TAG_MTFA)
    seed_wadd = derive_seed(config.base_seed, _TAG_WADD)

    points = []
    for spec in config.detectors:
        per_set_mtfa, per_set_wadd = [], []
        radius = None
        label = _detector_label(spec)
        sets = trainings if spec.get("kind") != "exact" else trainings[:1]
        for training in sets:
            scorers, label, radius = build_detector(
                spec, q_model, p_model, training, config.order_s)
            mtfa_plan = TrialPlan(scorers=scorers, threshold_b=float(b_grid.max()),
                                  q_model=q_model, trials=config.mtfa_trials,
                                  cap=config.mtfa_cap, base_seed=seed_mtfa,
                                  n_jobs=config.n_jobs)
            per_set_mtfa.append(_grid_estimates(
                _records_batch(mtfa_plan), b_grid, config.mtfa_cap))
            wadd_plan = TrialPlan(scorers=scorers, threshold_b=float(b_grid.max()),
                                  q_model=q_model, p_model=p_model, change_point=1,
                                  trials=config.wadd_trials, cap=config.wadd_cap,
                                  base_seed=seed_wadd, n_jobs=config.n_jobs)
            per_set_wadd.append(_grid_estimates(
                _records_batch(wadd_plan), b_grid, config.wadd_cap))
        for j, b in enumerate(b_grid):
            m_est = [s[j] for s in per_set_mtfa]
            w_est = [s[j] for s in per_set_wadd]
            mtfa, mtfa_se = _pool_sets(m_est)
            wadd, wadd_se = _pool_sets(w_est)
            points.append(OcPoint(
                detector=label, b=float(b), mtfa=mtfa, mtfa_se=mtfa_se,
                wadd=wadd, wadd_se=wadd_se,
                censored=sum(e.censored for e in m_est) + sum(e.censored for e in w_est),
                radius=radius,
                n=config.n_train if spec.get("kind") != "exact" else None,
                seed=config.base_seed))
    fields = ["detector", "b", "mtfa", "mtfa_se", "wadd", "wadd_se",
              "censored", "radius", "n", "seed"]
    if csv_path is not None:
        write_rows_csv(csv_path, fields, [p.to_row() for p in points])
        if manifest_path is not None:
            _write_manifest(manifest_path, config,
                            {"csv": os.path.basename(csv_path), "rows": len(points)})
    return points


def _pool_sets(estimates: list) -> tuple:
    vals = np.asarray([e.value for e in estimates])
    if vals.size == 1:
        return float(vals[0]), float(estimates[0].se)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.size))


def run_kl_curve(config: ExperimentConfig, csv_path: Optional[str] = None,
                 manifest_path: Optional[str] = None) -> list:
    """Divergence of the least-favorable law from the pre-change law as a
    function of the ball radius, averaged over training sets. Returns rows of
    (radius, mean divergence, per-set values)."""
    if not config.radius_grid:
        raise DataError("config.radius_grid is empty")
    q_model = _resolve_model(config.q)
    if config.p is None:
        raise DataError("divergence-vs-radius runs need a post-change model "
                        "to draw training sets from")
    p_model = _resolve_model(config.p)
    trainings = _training_sets(config, p_model)
    metric = CostMetric(order_s=config.order_s)
    rows = []
    for r in config.radius_grid:
        vals = [fit_lfd_scorer(q_model, metric, tr, float(r)).dual_value
                for tr in trainings]
        arr = np.asarray(vals)
        rows.append({"radius": float(r), "dual_value": float(arr.mean()),
                     "dual_value_se": float(arr.std(ddof=1) / math.sqrt(arr.size))
                     if arr.size > 1 else 0.0,
                     "sets": arr.size, "n": config.n_train,
                     "seed": config.base_seed})
    if csv_path is not None:
        write_rows_csv(csv_path, ["radius", "dual_value", "dual_value_se",
                                  "sets", "n", "seed"], rows)
        if manifest_path is not None:
            _write_manifest(manifest_path, config,
                            {"csv": os.path.basename(csv_path), "rows": len(rows)})
    return rows
