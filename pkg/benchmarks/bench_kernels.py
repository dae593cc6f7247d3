#!/usr/bin/env python3
"""Benchmark the hot kernels: numba backend vs pure-numpy fallback.

Runs every kernel on a large strip for both backends (when numba is
importable) and prints per-call timings with the speedup.  The numba
timings exclude JIT compilation (one warmup call per kernel).

Usage: python3 benchmarks/bench_kernels.py [nx] [ny] [repeats]
"""

import sys
import time

import numpy as np

from chwall import kernels


def time_call(fn, args, repeats):
    fn(*args)  # warmup (JIT compile / cache touch)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def main():
    nx = int(sys.argv[1]) if len(sys.argv) > 1 else 256
    ny = int(sys.argv[2]) if len(sys.argv) > 2 else 256
    repeats = int(sys.argv[3]) if len(sys.argv) > 3 else 50
    rng = np.random.default_rng(0)
    u = rng.standard_normal((ny, nx))
    v = rng.standard_normal((ny, nx))
    hx, hy = 1.0 / nx, 1.0 / (ny - 2)
    cases = {
        "lap_strip": (u, hx, hy),
        "lap_interval": (u[:, 0].copy(), hy),
        "beltrami": (u[:2].copy(), hx),
        "normal_derivative_strip": (u, hy),
        "normal_derivative_interval": (u[:, 0].copy(), hy),
        "grad_form_strip": (u, v, hx, hy),
        "grad_form_interval": (u[:, 0].copy(), v[:, 0].copy(), hy),
        "par_form": (u[:2].copy(), v[:2].copy(), hx),
    }
    backends = list(kernels.IMPLEMENTATIONS)
    print(f"grid {nx}x{ny}, {repeats} repeats; backends: {', '.join(backends)}")
    header = f"{'kernel':<28}" + "".join(f"{b + ' [us]':>14}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for name, args in cases.items():
        row = f"{name:<28}"
        times = []
        for b in backends:
            dt = time_call(kernels.IMPLEMENTATIONS[b][name], args, repeats)
            times.append(dt)
            row += f"{dt * 1e6:>14.1f}"
        if len(times) == 2:
            row += f"{times[0] / times[1]:>10.2f}x"
        print(row)
    if "numba" not in backends:
        print("numba not importable: only the numpy fallback was timed")


if __name__ == "__main__":
    main()
