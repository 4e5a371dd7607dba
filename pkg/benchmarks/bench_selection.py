#!/usr/bin/env python3
"""Benchmark the fused subset-rate kernel: numba lane vs pure-numpy lane.

The kernel is the hot inner loop of exhaustive search, greedy selection,
BPSO fitness and dataset labeling.  Run:

    python3 benchmarks/bench_selection.py [--trials 200]
"""

import argparse
import time

import numpy as np

from mmwsel import kernels
from mmwsel.channel import ArrayGeometry, ChannelConfig, generate_channel_matrix, substream
from mmwsel.selection import all_subsets

SCENARIOS = [
    ("desk n_tx=16  n_users=6  n_select=3", ChannelConfig(
        n_tx=16, n_users=6, geometry=ArrayGeometry(4, 4)), 3),
    ("full n_tx=144 n_users=10 n_select=6", ChannelConfig(
        n_tx=144, n_users=10, geometry=ArrayGeometry(12, 12)), 6),
]


def time_lane(fn, channels, combos, noise, repeat):
    # warm-up covers JIT compilation for the numba lane
    fn(channels[0], combos, noise)
    t0 = time.perf_counter()
    for i in range(repeat):
        fn(channels[i % len(channels)], combos, noise)
    return (time.perf_counter() - t0) / repeat


def scan_numpy(h, combos, noise):
    return kernels.scan_best_numpy(h, combos, noise)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--trials", type=int, default=200,
                        help="timed exhaustive searches per scenario")
    args = parser.parse_args()

    if not kernels.USING_NUMBA:
        print("note: numba lane unavailable (MMWSEL_NO_NUMBA set or numba "
              "missing); timing the numpy lane against itself\n")

    print(f"{'scenario':42s} {'subsets':>8s} {'numpy':>12s} "
          f"{'dispatched':>12s} {'speedup':>8s}")
    for name, cfg, n_select in SCENARIOS:
        combos = all_subsets(cfg.n_users, n_select)
        channels = [generate_channel_matrix(cfg, substream(1, i))
                    for i in range(min(args.trials, 50))]
        t_np = time_lane(scan_numpy, channels, combos, 0.1, args.trials)
        t_fast = time_lane(kernels.scan_best, channels, combos, 0.1, args.trials)
        print(f"{name:42s} {combos.shape[0]:8d} {t_np * 1e3:9.3f} ms "
              f"{t_fast * 1e3:9.3f} ms {t_np / t_fast:7.1f}x")
    per_subset = t_fast / combos.shape[0]
    print(f"\ndispatched lane ({kernels.BACKEND}): "
          f"{per_subset * 1e6:.1f} us per subset at full scale")


if __name__ == "__main__":
    main()
