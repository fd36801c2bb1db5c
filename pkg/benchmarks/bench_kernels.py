#!/usr/bin/env python3
"""Time the numba kernels against their numpy fallbacks.

Run after installing the package:

    python benchmarks/bench_kernels.py            # full sizes
    python benchmarks/bench_kernels.py --quick    # tiny sizes (smoke test)

Results depend on core count and BLAS; the point is a side-by-side of the
two code paths selected by HAMTOMO_NO_NUMBA.
"""

import argparse
import time

import numpy as np

import hamtomo.kernels as kernels


def timeit(fn, *args, repeats=5):
    fn(*args)  # warm up / jit
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--quick", action="store_true", help="tiny sizes, smoke only")
    args = parser.parse_args()

    n_samples = 1025 if args.quick else 16385
    n_grid = 200 if args.quick else 8000
    rng = np.random.default_rng(0)
    times = np.arange(n_samples) * 0.1
    data = rng.random((16, n_samples))
    freqs = np.sort(rng.uniform(0.3, 7.0, 6))
    omegas = np.linspace(0.0, 7.5, n_grid)

    print(f"backend in use: {kernels.backend_name()}")
    print(f"sizes: N={n_samples}, grid={n_grid}, traces=16, freqs=6")
    print()
    print(f"{'kernel':<24} {'numba [ms]':>12} {'numpy [ms]':>12} {'speedup':>9}")
    for name, nb, np_, call in (
        ("power_rows", kernels.power_rows_numba, kernels.power_rows_numpy,
         (data, times, omegas)),
        ("gram_and_projections", kernels.gram_and_projections_numba,
         kernels.gram_and_projections_numpy, (freqs, times, data)),
    ):
        t_nb = timeit(nb, *call) * 1e3
        t_np = timeit(np_, *call) * 1e3
        print(f"{name:<24} {t_nb:>12.2f} {t_np:>12.2f} {t_np / t_nb:>8.2f}x")


if __name__ == "__main__":
    main()
