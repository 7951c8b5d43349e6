"""Command-line front end.

Each subcommand prints a single JSON document to stdout carrying a manifest
(the parsed inputs, seeds, and package version; enough to replay the run) and
the result. Output files are written atomically, so a failed run never leaves
a partial artifact.

Model specs use a compact grammar:
  gaussian:mu=0,sigma=1        1-d Gaussian (sigma is the standard deviation)
  gaussian:mu=0|1,sigma=1|2    diagonal Gaussian, |-separated coordinates
  empirical:path.csv           atoms loaded from a CSV file

Exit codes: 0 success, 2 usage error, 3 data error, 4 solver failure.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .distributions import (
    DataError,
    EmpiricalDistribution,
    EmpiricalPreChange,
    Gaussian1D,
    GaussianDiag,
    SolverError,
    model_descriptor,
    read_observations_csv,
)
from .lfd import CostMetric, LfdScorer, fit_lfd_scorer
from .quadrature import QuadratureError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_SOLVER = 4


def parse_model_spec(spec: str):
    """Parse the CLI model grammar documented in the module docstring."""
    kind, _, rest = spec.partition(":")
    if kind == "empirical":
        if not rest:
            raise DataError("empirical model spec needs a CSV path")
        return EmpiricalPreChange(read_observations_csv(rest))
    if kind != "gaussian":
        raise DataError(f"unknown model kind {kind!r} in spec {spec!r}")
    params = {}
    for item in filter(None, rest.split(",")):
        key, _, val = item.partition("=")
        if not val:
            raise DataError(f"malformed model parameter {item!r} in spec {spec!r}")
        try:
            params[key.strip()] = np.asarray([float(v) for v in val.split("|")])
        except ValueError:
            raise DataError(f"non-numeric value in model parameter {item!r}") from None
    mu = params.pop("mu", np.asarray([0.0]))
    sigma = params.pop("sigma", np.asarray([1.0]))
    if params:
        raise DataError(f"unknown gaussian parameters {sorted(params)} in spec {spec!r}")
    if mu.size == 1 and sigma.size == 1:
        return Gaussian1D(float(mu[0]), float(sigma[0]) ** 2)
    if sigma.size == 1:
        sigma = np.full(mu.size, float(sigma[0]))
    return GaussianDiag(mu, sigma ** 2)


def _emit(manifest: dict, result: dict) -> None:
    manifest = dict(manifest)
    manifest["package"] = {"name": "drcusum", "version": __version__}
    json.dump({"manifest": manifest, "result": result}, sys.stdout,
              indent=2, sort_keys=True)
    sys.stdout.write("\n")


def _load_scorers(paths) -> tuple:
    from .detector import ScenarioScorer

    return tuple(ScenarioScorer(i + 1, LfdScorer.load(p))
                 for i, p in enumerate(paths))


def _resolve_threshold(args, m: int) -> float:
    from .detector import threshold_for_mtfa

    if args.threshold is not None:
        return float(args.threshold)
    if args.gamma is not None:
        return threshold_for_mtfa(float(args.gamma), m)
    raise DataError("need --threshold or --gamma")


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------


def cmd_lfd_solve(args) -> int:
    training = EmpiricalDistribution(read_observations_csv(args.train))
    pre = parse_model_spec(args.pre)
    metric = CostMetric(order_s=args.order_s)
    scorer = fit_lfd_scorer(pre, metric, training, args.radius)
    scorer.save(args.out)
    sol = scorer.solution
    _emit(
        {"command": "lfd-solve", "pre": args.pre, "train": args.train,
         "radius": args.radius, "order_s": args.order_s, "out": args.out},
        {"dual_value": sol.dual_value, "lambda_star": sol.point.lam,
         "log_eta": sol.log_eta, "iterations": sol.iterations,
         "converged": sol.converged},
    )
    return EXIT_OK


def cmd_detect(args) -> int:
    from .detector import alarm_record, run_stream

    scorers = _load_scorers(args.scorer)
    b = _resolve_threshold(args, len(scorers))
    if args.stream == "-":
        stream = read_observations_csv(sys.stdin)
    else:
        stream = read_observations_csv(args.stream)
    res = run_stream(scorers, b, stream, cap=max(1, stream.shape[0]))
    _emit(
        {"command": "detect", "scorer": list(args.scorer), "threshold": b,
         "gamma": args.gamma, "stream": args.stream},
        alarm_record(res),
    )
    return EXIT_OK


def _sim_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--scorer", action="append", required=True,
                     help="fitted scorer JSON; repeat for multiple scenarios")
    sub.add_argument("--threshold", type=float, default=None)
    sub.add_argument("--gamma", type=float, default=None,
                     help="target MTFA; threshold becomes log(M*gamma)")
    sub.add_argument("--trials", type=int, default=200)
    sub.add_argument("--cap", type=int, default=100000)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--jobs", type=int, default=1)


def cmd_sim_mtfa(args) -> int:
    from .sim import TrialPlan, estimate_mtfa

    scorers = _load_scorers(args.scorer)
    b = _resolve_threshold(args, len(scorers))
    q_model = scorers[0].scorer.prechange
    plan = TrialPlan(scorers=scorers, threshold_b=b, q_model=q_model,
                     trials=args.trials, cap=args.cap, base_seed=args.seed,
                     n_jobs=args.jobs)
    est = estimate_mtfa(plan)
    _emit(
        {"command": "sim-mtfa", "scorer": list(args.scorer), "threshold": b,
         "trials": args.trials, "cap": args.cap, "seed": args.seed},
        {"mtfa": est.value, "se": est.se, "censored": est.censored,
         "trials": est.trials, "label": est.label()},
    )
    return EXIT_OK


def cmd_sim_wadd(args) -> int:
    from .sim import TrialPlan, estimate_wadd

    scorers = _load_scorers(args.scorer)
    b = _resolve_threshold(args, len(scorers))
    q_model = scorers[0].scorer.prechange
    p_model = parse_model_spec(args.post)
    plan = TrialPlan(scorers=scorers, threshold_b=b, q_model=q_model,
                     p_model=p_model, change_point=args.change_point,
                     trials=args.trials, cap=args.cap, base_seed=args.seed,
                     n_jobs=args.jobs)
    est = estimate_wadd(plan)
    _emit(
        {"command": "sim-wadd", "scorer": list(args.scorer), "threshold": b,
         "post": args.post, "change_point": args.change_point,
         "trials": args.trials, "cap": args.cap, "seed": args.seed},
        {"wadd": est.value, "se": est.se, "censored": est.censored,
         "trials": est.trials, "label": est.label(),
         "metadata": est.metadata},
    )
    return EXIT_OK


def _detector_spec(text: str) -> dict:
    kind, _, arg = text.partition(":")
    try:
        if kind == "dr" and arg:
            return {"kind": "dr", "radius": float(arg)}
        if kind == "nglr":
            return {"kind": "nglr", "window": int(arg)} if arg else {"kind": "nglr"}
    except ValueError:
        raise DataError(f"bad detector argument in {text!r}") from None
    if kind in ("exact", "mle") and not arg:
        return {"kind": kind}
    raise DataError(f"unknown detector spec {text!r} "
                    "(use exact, mle, nglr[:window], or dr:<radius>)")


def _load_experiment_config(path: str):
    """Config files may use the compact model/detector grammar; the library
    form (descriptor dicts) passes through untouched."""
    from .sim import ExperimentConfig

    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise DataError("experiment config must be a JSON object")
    for key in ("q", "p"):
        if isinstance(doc.get(key), str):
            doc[key] = model_descriptor(parse_model_spec(doc[key]))
    if isinstance(doc.get("detectors"), list):
        doc["detectors"] = [_detector_spec(s) if isinstance(s, str) else s
                            for s in doc["detectors"]]
    return ExperimentConfig.from_json_dict(doc)


def cmd_oc_curve(args) -> int:
    from .sim import run_oc_curve

    cfg = _load_experiment_config(args.config)
    points = run_oc_curve(cfg, csv_path=args.out, manifest_path=args.manifest)
    _emit(
        {"command": "oc-curve", "config": cfg.to_json_dict(), "out": args.out,
         "manifest": args.manifest},
        {"rows": len(points)},
    )
    return EXIT_OK


def cmd_kl_curve(args) -> int:
    from .sim import ExperimentConfig, run_kl_curve

    with open(args.config, encoding="utf-8") as fh:
        cfg = ExperimentConfig.from_json_dict(json.load(fh))
    rows = run_kl_curve(cfg, csv_path=args.out, manifest_path=args.manifest)
    _emit(
        {"command": "kl-curve", "config": cfg.to_json_dict(), "out": args.out,
         "manifest": args.manifest},
        {"rows": len(rows)},
    )
    return EXIT_OK


def cmd_radius(args) -> int:
    from .radius import (min_samples, radius_lower_bound, radius_upper_bound,
                         ts_constant, wadd_upper_bound)

    tc = ts_constant(args.tc)
    lower = radius_lower_bound(args.delta, tc, args.order_s, args.n)
    result = {"lower": lower}
    if args.wpq is not None:
        result["upper"] = radius_upper_bound(args.wpq, args.delta, tc,
                                             args.order_s, args.n)
        result["n_min"] = min_samples(args.delta, tc, args.order_s, args.wpq)
        if args.gamma is not None:
            r = args.radius if args.radius is not None else lower
            result["wadd_bound"] = wadd_upper_bound(args.gamma, tc,
                                                    args.wpq, r)
            result["radius_used"] = r
    _emit(
        {"command": "radius", "delta": args.delta, "tc": args.tc,
         "order_s": args.order_s, "n": args.n, "wpq": args.wpq,
         "gamma": args.gamma, "radius": args.radius},
        result,
    )
    return EXIT_OK


def cmd_calibrate(args) -> int:
    from .sim import calibrate_threshold

    scorers = _load_scorers(args.scorer)
    q_model = scorers[0].scorer.prechange
    bracket = tuple(args.bracket) if args.bracket else None
    b = calibrate_threshold(scorers, q_model, args.target_mtfa,
                            bracket=bracket, trials=args.trials,
                            cap=args.cap, base_seed=args.seed,
                            n_jobs=args.jobs)
    _emit(
        {"command": "calibrate", "scorer": list(args.scorer),
         "target_mtfa": args.target_mtfa, "bracket": args.bracket,
         "trials": args.trials, "cap": args.cap, "seed": args.seed},
        {"threshold": b},
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="drcusum",
        description="Minimax-robust quickest change detection with "
                    "Wasserstein uncertainty sets.")
    p.add_argument("--version", action="version", version=f"drcusum {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("lfd-solve", help="fit the least-favorable scorer")
    s.add_argument("--pre", required=True, help="pre-change model spec")
    s.add_argument("--train", required=True, help="training-sample CSV")
    s.add_argument("--radius", type=float, required=True)
    s.add_argument("--order-s", dest="order_s", type=float, default=2.0)
    s.add_argument("--out", required=True, help="scorer JSON output path")
    s.set_defaults(func=cmd_lfd_solve)

    s = sub.add_parser("detect", help="run the detector over a stream")
    s.add_argument("--scorer", action="append", required=True,
                   help="fitted scorer JSON; repeat for multiple scenarios")
    s.add_argument("--threshold", type=float, default=None)
    s.add_argument("--gamma", type=float, default=None)
    s.add_argument("--stream", required=True, help="CSV path or - for stdin")
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("sim-mtfa", help="estimate mean time to false alarm")
    _sim_common(s)
    s.set_defaults(func=cmd_sim_mtfa)

    s = sub.add_parser("sim-wadd", help="estimate detection delay")
    _sim_common(s)
    s.add_argument("--post", required=True, help="post-change model spec")
    s.add_argument("--change-point", dest="change_point", type=int, default=1)
    s.set_defaults(func=cmd_sim_wadd)

    s = sub.add_parser("oc-curve", help="operating-characteristic sweep")
    s.add_argument("--config", required=True, help="ExperimentConfig JSON")
    s.add_argument("--out", required=True, help="CSV output path")
    s.add_argument("--manifest", default=None, help="JSON manifest path")
    s.set_defaults(func=cmd_oc_curve)

    s = sub.add_parser("kl-curve", help="divergence vs radius sweep")
    s.add_argument("--config", required=True, help="ExperimentConfig JSON")
    s.add_argument("--out", required=True, help="CSV output path")
    s.add_argument("--manifest", default=None, help="JSON manifest path")
    s.set_defaults(func=cmd_kl_curve)

    s = sub.add_parser("radius", help="radius-selection bounds")
    s.add_argument("--delta", type=float, required=True)
    s.add_argument("--tc", type=float, required=True,
                   help="transportation-cost constant")
    s.add_argument("--order-s", dest="order_s", type=float, default=2.0)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--wpq", type=float, default=None,
                   help="distance between post- and pre-change laws")
    s.add_argument("--gamma", type=float, default=None)
    s.add_argument("--radius", type=float, default=None)
    s.set_defaults(func=cmd_radius)

    s = sub.add_parser("calibrate", help="bisect the threshold to a target MTFA")
    s.add_argument("--scorer", action="append", required=True)
    s.add_argument("--target-mtfa", dest="target_mtfa", type=float, required=True)
    s.add_argument("--bracket", type=float, nargs=2, default=None)
    s.add_argument("--trials", type=int, default=200)
    s.add_argument("--cap", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_calibrate)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DataError, OSError, json.JSONDecodeError) as exc:
        print(f"drcusum: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SolverError, QuadratureError) as exc:
        print(f"drcusum: solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"drcusum: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
