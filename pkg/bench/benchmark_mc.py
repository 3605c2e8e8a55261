"""Benchmark the Monte-Carlo coalescence kernel: numba vs pure numpy.

Both backends consume the same precomputed randomness indices, so their
integer counts must agree exactly; the script verifies that before timing.

Usage:
    python3 bench/benchmark_mc.py [--n 8] [--samples 100000] [--m-max 64]
                                  [--seed 2026] [--repeats 3]

Set QCOUPLING_NO_NUMBA=1 before launching to check that the numpy fallback is
selected as the default backend (the numba column is then skipped).
"""

import argparse
import time

import numpy as np

from qcoupling.coupling import _draw_randomness
from qcoupling.kernels import DEFAULT_BACKEND, coalescence_counts
from qcoupling.models import hypercube_model, hypercube_worst_pair


def timed(fn, repeats):
    best = float("inf")
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - t0)
    return result, best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=8, help="hypercube dimension")
    ap.add_argument("--samples", type=int, default=100_000)
    ap.add_argument("--m-max", type=int, default=64)
    ap.add_argument("--seed", type=int, default=2026)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    model = hypercube_model(args.n)
    x0, y0 = hypercube_worst_pair(args.n)
    rmr = model.rmr
    grid = np.arange(0, args.m_max + 1, max(1, args.m_max // 16), dtype=np.int64)
    r_idx = _draw_randomness(rmr.probs, args.samples, args.m_max, args.seed, 0)

    print(f"hypercube n={args.n}: {args.samples} trajectories, m_max={args.m_max}, "
          f"default backend: {DEFAULT_BACKEND}")

    backends = ["numpy"]
    if DEFAULT_BACKEND == "numba":
        # warm-up triggers JIT compilation outside the timed region
        coalescence_counts(rmr.table, r_idx[:16], x0, y0, grid, backend="numba")
        backends.append("numba")

    results = {}
    for backend in backends:
        counts, secs = timed(
            lambda b=backend: coalescence_counts(rmr.table, r_idx, x0, y0, grid, backend=b),
            args.repeats,
        )
        results[backend] = (counts, secs)
        rate = args.samples / secs
        print(f"  {backend:>6}: {secs * 1e3:8.2f} ms  ({rate:,.0f} trajectories/s)")

    if len(backends) == 2:
        np.testing.assert_array_equal(results["numpy"][0], results["numba"][0])
        speedup = results["numpy"][1] / results["numba"][1]
        print(f"  counts identical; numba speedup: {speedup:.1f}x")


if __name__ == "__main__":
    main()
