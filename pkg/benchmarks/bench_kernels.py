#!/usr/bin/env python3
"""Time the numba kernels against their pure-numpy counterparts.

Usage:
    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --runs 50 200 --trials 100 --repeat 50
    python3 benchmarks/bench_kernels.py --output bench.json

With BANDITPROBE_DISABLE_NUMBA=1 only the numpy column is filled.
"""

import argparse
import json
import time

import numpy as np

from banditprobe import _kernels
from banditprobe._accel import NUMBA_ENABLED
from banditprobe.bandit import preset
from banditprobe.rw_model import FitDataset, GroupHyper, HierarchicalRW, simulate_batch


def best_of(fn, repeat: int) -> float:
    fn()  # compile / warm caches
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def make_data(n_runs: int, n_trials: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.05, 0.5, n_runs)
    tau = rng.uniform(0.5, 4.5, n_runs)
    choices, rewards = simulate_batch(a, tau, preset("asymmetric"), n_trials, list(range(n_runs)))
    valid = np.ones(choices.shape, dtype=bool)
    return a, tau, choices, rewards, valid


def bench_case(n_runs: int, n_trials: int, repeat: int) -> dict:
    a, tau, ch, rw, va = make_data(n_runs, n_trials)
    data = FitDataset(ch, rw, va, list(range(n_runs)))
    model = HierarchicalRW(data)
    theta = model.pack(GroupHyper(-0.8, 0.1, 0.4, 0.1), np.zeros(n_runs), np.zeros(n_runs))
    rng = np.random.default_rng(1)
    cu, ru = rng.random((n_runs, n_trials)), rng.random((n_runs, n_trials))

    cases = {
        "loglik_grad": (lambda: _kernels.loglik_grad_loop(a, tau, ch, rw, va),
                        lambda: _kernels.loglik_grad_numpy(a, tau, ch, rw, va)),
        "log_prob_grad": (lambda: _kernels.log_prob_grad_loop(theta, ch, rw, va),
                          lambda: model.log_prob_grad_numpy(theta)),
        "simulate": (lambda: _kernels.simulate_loop(a, tau, 0.75, 0.25, cu, ru, False),
                     lambda: _kernels.simulate_numpy(a, tau, 0.75, 0.25, cu, ru, False)),
    }
    out = {}
    for name, (fast, slow) in cases.items():
        t_np = best_of(slow, repeat)
        t_nb = best_of(fast, repeat) if NUMBA_ENABLED else None
        out[name] = {"numpy_s": t_np, "numba_s": t_nb, "speedup": (t_np / t_nb) if t_nb else None}
    return out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--runs", type=int, nargs="+", default=[50, 200])
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--repeat", type=int, default=30)
    ap.add_argument("--output", help="write results as JSON")
    args = ap.parse_args()

    print(f"backend: {'numba' if NUMBA_ENABLED else 'numpy only'}")
    print(f"{'kernel':<15}{'runs':>6}{'numpy (ms)':>13}{'numba (ms)':>13}{'speedup':>9}")
    results = {}
    for n in args.runs:
        res = bench_case(n, args.trials, args.repeat)
        results[f"{n}x{args.trials}"] = res
        for name, r in res.items():
            nb = f"{r['numba_s'] * 1e3:13.3f}" if r["numba_s"] else f"{'-':>13}"
            sp = f"{r['speedup']:8.1f}x" if r["speedup"] else f"{'-':>9}"
            print(f"{name:<15}{n:>6}{r['numpy_s'] * 1e3:13.3f}{nb}{sp}")
    if args.output:
        with open(args.output, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
