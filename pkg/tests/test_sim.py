"""Monte-Carlo estimation: trial plans, records, calibration, curve runners."""
from __future__ import annotations

import json
import math
import warnings

import numpy as np
import pytest

from drcusum import (
    DataError,
    ExactLlrScorer,
    ExperimentConfig,
    Gaussian1D,
    KdeConfig,
    NglrScorer,
    ScenarioScorer,
    TrialPlan,
    calibrate_threshold,
    estimate_mtfa,
    estimate_wadd,
    run_kl_curve,
    run_oc_curve,
    threshold_for_mtfa,
    trial_rng,
)
from drcusum.distributions import model_descriptor
from drcusum.sim import _stream_chunk, crossing_records, write_rows_csv

from conftest import ConstantScorer

Q01 = Gaussian1D(0.0, 1.0)
P51 = Gaussian1D(0.5, 1.0)


def one(scorer):
    return (ScenarioScorer(1, scorer),)


def tau_from_records(times, values, b, cap):
    idx = int(np.searchsorted(values, b, side="left"))
    return float(times[idx]) if idx < times.size else float(cap + 1)


# ---------------------------------------------------------------------------
# Deterministic plans
# ---------------------------------------------------------------------------


def test_unit_ramp_delay_is_exact():
    plan = TrialPlan(scorers=one(ConstantScorer(1.0)), threshold_b=10.0,
                     q_model=Q01, p_model=P51, change_point=1,
                     trials=6, cap=100, base_seed=1)
    est = estimate_wadd(plan)
    assert est.value == 10.0
    assert est.se == 0.0
    assert est.censored == 0
    assert est.trials == 6


def test_never_crossing_plan_is_fully_censored():
    plan = TrialPlan(scorers=one(ConstantScorer(-1.0)), threshold_b=5.0,
                     q_model=Q01, trials=4, cap=50, base_seed=1)
    est = estimate_mtfa(plan)
    assert est.censored == 4
    assert est.all_censored
    assert est.value == 50.0       # censored trials counted at the cap
    assert est.label() == "> 50"


def test_estimate_roles_are_enforced():
    with pytest.raises(ValueError):
        estimate_mtfa(TrialPlan(scorers=one(ConstantScorer(1.0)), threshold_b=5.0,
                                q_model=Q01, p_model=P51, change_point=3,
                                trials=2, cap=10))
    with pytest.raises(ValueError):
        estimate_wadd(TrialPlan(scorers=one(ConstantScorer(1.0)), threshold_b=5.0,
                                q_model=Q01, trials=2, cap=10))


def test_trial_plan_validation():
    with pytest.raises(ValueError):
        TrialPlan(scorers=one(ConstantScorer(1.0)), threshold_b=float("nan"),
                  q_model=Q01, trials=2, cap=10)
    with pytest.raises(ValueError):
        TrialPlan(scorers=one(ConstantScorer(1.0)), threshold_b=1.0,
                  q_model=Q01, trials=0, cap=10)
    with pytest.raises(ValueError):
        TrialPlan(scorers=one(ConstantScorer(1.0)), threshold_b=1.0,
                  q_model=Q01, trials=2, cap=0)
    with pytest.raises(ValueError):
        # a change point requires the post-change model
        TrialPlan(scorers=one(ConstantScorer(1.0)), threshold_b=1.0,
                  q_model=Q01, change_point=2, trials=2, cap=10)


def test_single_trial_estimate_has_nan_se():
    plan = TrialPlan(scorers=one(ConstantScorer(1.0)), threshold_b=3.0,
                     q_model=Q01, trials=1, cap=10)
    est = estimate_mtfa(plan)
    assert est.value == 3.0
    assert math.isnan(est.se)


# ---------------------------------------------------------------------------
# Stream generation invariants
# ---------------------------------------------------------------------------


def test_stream_chunks_are_split_invariant():
    plan = TrialPlan(scorers=one(ConstantScorer(1.0)), threshold_b=1e9,
                     q_model=Q01, p_model=P51, change_point=5,
                     trials=1, cap=100, base_seed=9)
    full = _stream_chunk(plan, trial_rng(9, 0), 0, 12)
    parts = []
    rng = trial_rng(9, 0)
    for pos, count in [(0, 3), (3, 4), (7, 5)]:
        parts.append(_stream_chunk(plan, rng, pos, count))
    np.testing.assert_array_equal(full, np.vstack(parts))


def test_change_point_switches_the_law():
    # huge separation makes the switch visible in the raw values
    plan = TrialPlan(scorers=one(ConstantScorer(1.0)), threshold_b=1e9,
                     q_model=Gaussian1D(0.0, 1e-6), p_model=Gaussian1D(100.0, 1e-6),
                     change_point=4, trials=1, cap=10, base_seed=0)
    X = _stream_chunk(plan, trial_rng(0, 0), 0, 8)
    assert np.all(np.abs(X[:3]) < 1.0)       # rows 1..3 pre-change
    assert np.all(np.abs(X[3:] - 100.0) < 1.0)  # rows 4.. post-change


# ---------------------------------------------------------------------------
# Crossing records
# ---------------------------------------------------------------------------


def test_records_are_strictly_increasing():
    plan = TrialPlan(scorers=one(ExactLlrScorer(Q01, P51)), threshold_b=4.0,
                     q_model=Q01, trials=1, cap=3000, base_seed=21)
    times, values = crossing_records(plan, 0)
    assert times.size == values.size > 0
    assert np.all(np.diff(times) > 0)
    assert np.all(np.diff(values) > 0)
    assert times[0] >= 1


def test_records_reproduce_direct_estimates():
    base = dict(scorers=one(ExactLlrScorer(Q01, P51)), q_model=Q01,
                trials=3, cap=5000, base_seed=33)
    for b in (2.0, 3.5, 5.0):
        plan = TrialPlan(threshold_b=b, **base)
        direct = estimate_mtfa(plan)
        recs = [crossing_records(plan, t) for t in range(plan.trials)]
        taus = [min(tau_from_records(ts, vs, b, plan.cap), plan.cap)
                for ts, vs in recs]
        assert direct.value == pytest.approx(np.mean(taus), rel=1e-12)


def test_worker_count_does_not_change_results():
    mk = lambda jobs: TrialPlan(scorers=one(ExactLlrScorer(Q01, P51)),
                                threshold_b=3.0, q_model=Q01,
                                trials=8, cap=4000, base_seed=5, n_jobs=jobs)
    a = estimate_mtfa(mk(1))
    b = estimate_mtfa(mk(2))
    assert a.value == b.value
    assert a.se == b.se
    assert a.censored == b.censored


# ---------------------------------------------------------------------------
# Threshold calibration
# ---------------------------------------------------------------------------


def test_calibration_recovers_a_deterministic_target():
    # unit ramp: MTFA(b) = ceil(b); target 37 must land in (36, 37]
    scorers = one(ConstantScorer(1.0))
    b = calibrate_threshold(scorers, Q01, target_mtfa=37.0, bracket=(30.0, 40.0),
                            trials=10, cap=60, base_seed=2)
    assert 36.0 < b <= 37.0
    est = estimate_mtfa(TrialPlan(scorers=scorers, threshold_b=b, q_model=Q01,
                                  trials=10, cap=60, base_seed=2))
    assert est.value == 37.0
    assert est.se == 0.0


def test_calibration_is_monotone_in_target():
    scorers = one(ConstantScorer(1.0))
    b10 = calibrate_threshold(scorers, Q01, 10.0, bracket=(5.0, 25.0),
                              trials=6, cap=40, base_seed=2)
    b20 = calibrate_threshold(scorers, Q01, 20.0, bracket=(5.0, 25.0),
                              trials=6, cap=40, base_seed=2)
    assert b10 < b20
    assert 9.0 < b10 <= 10.0
    assert 19.0 < b20 <= 20.0


def test_analytic_warm_start_upper_bounds_the_calibrated_threshold():
    # the analytic threshold guarantees MTFA >= target, so the calibrated
    # value on actual streams can only sit at or below it
    scorers = one(ExactLlrScorer(Q01, P51))
    b = calibrate_threshold(scorers, Q01, target_mtfa=100.0, trials=80,
                            base_seed=11)
    assert b <= threshold_for_mtfa(100.0, 1) + 1e-9


def test_calibration_warns_on_unreachable_bracket():
    scorers = one(ConstantScorer(1.0))
    with pytest.warns(UserWarning, match="ceiling"):
        b = calibrate_threshold(scorers, Q01, 1000.0, bracket=(1.0, 5.0),
                                trials=4, cap=2000, base_seed=0)
    assert b == 5.0
    with pytest.warns(UserWarning, match="floor"):
        b = calibrate_threshold(scorers, Q01, 2.0, bracket=(10.0, 20.0),
                                trials=4, cap=2000, base_seed=0)
    assert b == 10.0


def test_calibration_validation():
    scorers = one(ConstantScorer(1.0))
    with pytest.raises(ValueError):
        calibrate_threshold(scorers, Q01, target_mtfa=1.0)
    with pytest.raises(ValueError):
        calibrate_threshold(scorers, Q01, 10.0, bracket=(5.0, 5.0))


# ---------------------------------------------------------------------------
# Delay caveats
# ---------------------------------------------------------------------------


def test_wadd_flags_window_limited_statistics():
    tr = np.random.default_rng(0).normal(1.0, 1.0, size=(2, 1))
    from drcusum import EmpiricalDistribution
    scorer = NglrScorer(Q01, EmpiricalDistribution(tr),
                        KdeConfig(bandwidths=np.array([0.5]), window=2))
    plan = TrialPlan(scorers=one(scorer), threshold_b=1e6, q_model=Q01,
                     p_model=P51, change_point=1, trials=2, cap=15, base_seed=3)
    est = estimate_wadd(plan)
    assert "caveat" in est.metadata
    plan = TrialPlan(scorers=one(ExactLlrScorer(Q01, P51)), threshold_b=3.0,
                     q_model=Q01, p_model=P51, change_point=1,
                     trials=2, cap=500, base_seed=3)
    assert "caveat" not in estimate_wadd(plan).metadata


# ---------------------------------------------------------------------------
# CSV writing and the curve runners
# ---------------------------------------------------------------------------


def test_write_rows_csv_formatting(tmp_path):
    path = str(tmp_path / "out.csv")
    write_rows_csv(path, ["a", "b", "c"],
                   [{"a": 1, "b": None, "c": 0.1}, {"a": "x", "b": 2.5, "c": np.float64(1.0 / 3.0)}])
    text = open(path).read()
    assert text == "a,b,c\n1,,0.1\nx,2.5,0.3333333333333333\n"
    # overwrite is atomic: same call again replaces content
    write_rows_csv(path, ["a"], [{"a": 7}])
    assert open(path).read() == "a\n7\n"


def _kl_config(**over):
    base = dict(
        name="kl-mini",
        q=model_descriptor(Q01),
        p=model_descriptor(Gaussian1D(1.0, 1.0)),
        detectors=(),
        n_train=10,
        training_sets=2,
        radius_grid=(0.05, 0.3, 0.8, 2.5),
        base_seed=5,
    )
    base.update(over)
    return ExperimentConfig(**base)


def test_kl_curve_rows_and_monotonicity(tmp_path):
    rows = run_kl_curve(_kl_config())
    assert [set(r) for r in rows] == [
        {"radius", "dual_value", "dual_value_se", "sets", "n", "seed"}] * 4
    vals = [r["dual_value"] for r in rows]
    assert vals == sorted(vals, reverse=True)
    assert vals[-1] == 0.0


def test_kl_curve_reruns_bit_identically(tmp_path):
    p1, p2 = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
    m1, m2 = str(tmp_path / "a.json"), str(tmp_path / "b.json")
    run_kl_curve(_kl_config(), csv_path=p1, manifest_path=m1)
    run_kl_curve(_kl_config(), csv_path=p2, manifest_path=m2)
    assert open(p1, "rb").read() == open(p2, "rb").read()
    doc = json.load(open(m1))
    assert doc["package"]["name"] == "drcusum"
    assert doc["config"]["name"] == "kl-mini"
    assert "outputs" in doc


def _oc_config(**over):
    base = dict(
        name="oc-mini",
        q=model_descriptor(Q01),
        p=model_descriptor(P51),
        detectors=({"kind": "exact"}, {"kind": "exact"}),
        n_train=8,
        training_sets=1,
        thresholds=(2.0, 3.0),
        mtfa_trials=10,
        wadd_trials=10,
        mtfa_cap=3000,
        wadd_cap=500,
        base_seed=3,
    )
    base.update(over)
    return ExperimentConfig(**base)


def test_oc_curve_rows_and_pairing(tmp_path):
    path = str(tmp_path / "oc.csv")
    rows = run_oc_curve(_oc_config(), csv_path=path)
    header = open(path).readline().strip().split(",")
    assert header == ["detector", "b", "mtfa", "mtfa_se", "wadd", "wadd_se",
                      "censored", "radius", "n", "seed"]
    assert len(rows) == 4  # 2 detectors x 2 thresholds
    # identical detector specs ride identical streams: equal estimates
    by_b = {}
    for r in rows:
        by_b.setdefault(r.b, []).append(r)
    for pair in by_b.values():
        assert pair[0].mtfa == pair[1].mtfa
        assert pair[0].wadd == pair[1].wadd
    # higher threshold: larger mtfa and wadd
    bs = sorted(by_b)
    assert by_b[bs[0]][0].mtfa < by_b[bs[1]][0].mtfa
    assert by_b[bs[0]][0].wadd <= by_b[bs[1]][0].wadd


def test_oc_curve_with_dr_and_mle_runs(tmp_path):
    cfg = _oc_config(detectors=({"kind": "mle"}, {"kind": "dr", "radius": 0.2}),
                     thresholds=(2.5,), mtfa_trials=6, wadd_trials=6)
    rows = run_oc_curve(cfg)
    labels = {r.detector for r in rows}
    assert labels == {"gaussian_mle", "dr_cusum"}
    dr = next(r for r in rows if r.detector == "dr_cusum")
    assert dr.radius == 0.2
    assert dr.n == 8


def test_oc_curve_reruns_bit_identically(tmp_path):
    p1, p2 = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
    run_oc_curve(_oc_config(), csv_path=p1)
    run_oc_curve(_oc_config(), csv_path=p2)
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_experiment_config_round_trip_and_validation():
    cfg = _oc_config()
    back = ExperimentConfig.from_json_dict(cfg.to_json_dict())
    assert back == cfg
    with pytest.raises(DataError):
        ExperimentConfig.from_json_dict({"name": "x", "q": {}, "bogus_field": 1})
    bad = cfg.to_json_dict()
    bad["detectors"] = [{"kind": "quantum"}]
    with pytest.raises(DataError):
        run_oc_curve(ExperimentConfig.from_json_dict(bad))
