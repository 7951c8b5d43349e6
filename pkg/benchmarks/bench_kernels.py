"""Timing comparison of the compiled kernels against the numpy reference.

Run:  python benchmarks/bench_kernels.py [--size 2000000] [--repeats 5]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from drcusum.kernels import BACKEND, _impl, _ref


def _time(fn, *args, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=2_000_000)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    llr = rng.normal(-0.05, 1.0, args.size)
    n_atoms = 25
    cost = np.ascontiguousarray(rng.random((200_000, n_atoms)))
    logw = np.full(n_atoms, -np.log(n_atoms))
    u = rng.normal(0, 0.1, n_atoms)

    print(f"active backend: {BACKEND}")
    rows = [
        ("cusum_path", lambda m: m.cusum_path(llr, 0.0)),
        ("cusum_run", lambda m: m.cusum_run(llr, 50.0, 0.0)),
        ("multi_cusum_run",
         lambda m: m.multi_cusum_run(np.vstack([llr[:500_000]] * 3), 50.0, np.zeros(3))),
        ("tilted_stats", lambda m: m.tilted_stats(cost, logw, 0.7, u)),
        ("min_c", lambda m: m.min_c(cost, 0.7, u)),
    ]
    print(f"{'kernel':<18}{'numpy ref (s)':>15}{'active (s)':>15}{'speedup':>10}")
    for name, call in rows:
        t_ref = _time(call, _ref, repeats=args.repeats)
        t_act = _time(call, _impl, repeats=args.repeats)
        print(f"{name:<18}{t_ref:>15.4f}{t_act:>15.4f}{t_ref / t_act:>10.2f}x")


if __name__ == "__main__":
    main()
