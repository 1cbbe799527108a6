#!/usr/bin/env python3
"""Throughput comparison: compiled event loops vs the numpy fallback.

Both implementations consume the same Philox streams and produce
bit-identical trajectories, so the comparison is purely about speed.

    python benchmarks/bench_kernels.py [--n 64 256] [--reps 20]
"""

import argparse
import time

import numpy as np

import bdmf
from bdmf import linear_attraction, mm_inf_model, power_model, rng
from bdmf._kernels import HAVE_COMPILED, build_table, compiled, fallback
from bdmf.meanfield import integrate_flow
from bdmf.measure import delta


def time_loop(fn, reps):
    n_events = 0
    t0 = time.perf_counter()
    for r in range(reps):
        n_events += fn(r)
    dt = time.perf_counter() - t0
    return n_events / dt, n_events / reps


def bench(n, reps):
    grid = np.linspace(0.0, 4.0, 13)
    attr = mm_inf_model(3.0, 5.0, interaction=linear_attraction(1.0))
    quad = power_model(1.0, 3.0, 1.0, interaction=bdmf.QuadraticPairwise(a=1.0))
    t_attr = build_table(attr, 64)
    t_quad = build_table(quad, 64)
    flow = integrate_flow(attr, delta(2, K=12), 4.0, grid=np.linspace(0.0, 4.0, 81))
    x_attr = np.full(n, 2, dtype=np.int64)
    x0 = np.zeros(n, dtype=np.int64)
    y3 = np.full(n, 3, dtype=np.int64)

    cases = {
        "system/attraction": lambda mod: (
            lambda r: mod.run_system(t_attr, x_attr, grid, rng.bit_generator(1, r))[-1]),
        "system/quadratic": lambda mod: (
            lambda r: mod.run_system(t_quad, y3, grid, rng.bit_generator(2, r))[-1]),
        "coupled/quadratic": lambda mod: (
            lambda r: mod.run_coupled(t_quad, x0, y3, grid, rng.bit_generator(3, r))[-1]),
        "driven/attraction": lambda mod: (
            lambda r: mod.run_driven(t_attr, x_attr, flow.times, flow.means, grid,
                                     rng.bit_generator(4, r))[-1]),
        "chaos/attraction": lambda mod: (
            lambda r: mod.run_chaos(t_attr, x_attr, flow.times, flow.means, grid,
                                    rng.bit_generator(5, r))[-1]),
    }

    print(f"\nN = {n}, {reps} replicas per cell")
    header = f"{'loop':<20} {'fallback ev/s':>14} {'compiled ev/s':>14} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, make in cases.items():
        fb, per_rep = time_loop(make(fallback), reps)
        if HAVE_COMPILED:
            co, _ = time_loop(make(compiled), reps)
            print(f"{name:<20} {fb:>14,.0f} {co:>14,.0f} {co / fb:>7.1f}x"
                  f"   ({per_rep:.0f} events/replica)")
        else:
            print(f"{name:<20} {fb:>14,.0f} {'-':>14} {'-':>8}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, nargs="+", default=[64, 256])
    ap.add_argument("--reps", type=int, default=20)
    args = ap.parse_args()
    if not HAVE_COMPILED:
        print("compiled kernels not built; showing fallback only")
    for n in args.n:
        bench(n, args.reps)


if __name__ == "__main__":
    main()
