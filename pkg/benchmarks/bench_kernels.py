"""Time the numba-compiled kernels against their pure-numpy twins.

Run as ``python benchmarks/bench_kernels.py``; each kernel is checked for
bitwise-identical outputs before timing. The dispatch flag LOSSCAST_NUMBA
does not matter here since both variants are called directly.
"""

import argparse
import statistics
import time

import numpy as np

from losscast._kernels import (
    HAVE_NUMBA,
    best_split_jit,
    best_split_np,
    ema_smooth_jit,
    ema_smooth_np,
    forest_predict_jit,
    forest_predict_np,
    max_window_slope_jit,
    max_window_slope_np,
)
from losscast.gbt import GBTParams, fit_gbt_arrays


def timeit(fn, repeats):
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def check_equal(a, b):
    a, b = np.atleast_1d(np.asarray(a)), np.atleast_1d(np.asarray(b))
    if not np.array_equal(a, b):
        raise AssertionError("variants disagree; benchmark aborted")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--rows", type=int, default=4000)
    parser.add_argument("--curve-len", type=int, default=100_000)
    parser.add_argument("--repeats", type=int, default=7)
    args = parser.parse_args()

    if not HAVE_NUMBA:
        print("numba is not importable; only the numpy variants will be timed")

    rng = np.random.default_rng(0)

    curve = 3.0 + np.exp(-np.linspace(0.0, 5.0, args.curve_len)) \
        + rng.normal(0.0, 0.01, args.curve_len)
    steps = np.arange(1, args.curve_len + 1, dtype=np.float64) * 10.0
    window = max(2, int(0.05 * args.curve_len))

    X = rng.normal(size=(args.rows, 30))
    y = X[:, 0] * 0.3 + np.sin(X[:, 1]) + rng.normal(0.0, 0.1, args.rows)
    forest = fit_gbt_arrays(X, y, GBTParams(rounds=120, max_depth=5))
    trees = (forest.feature, forest.threshold, forest.left, forest.right,
             forest.value, forest.offsets)

    cases = [
        ("ema_smooth", lambda f: f(curve, 0.99),
         ema_smooth_np, ema_smooth_jit),
        ("max_window_slope", lambda f: f(steps, curve, window),
         max_window_slope_np, max_window_slope_jit),
        ("best_split", lambda f: f(X, y, 5),
         best_split_np, best_split_jit),
        ("forest_predict", lambda f: f(X, *trees),
         forest_predict_np, forest_predict_jit),
    ]

    print(f"{'kernel':<18} {'numpy':>10} {'numba':>10} {'speedup':>8}")
    for name, call, np_fn, jit_fn in cases:
        call(jit_fn)  # trigger compilation outside the timed region
        check_equal(call(np_fn), call(jit_fn))
        t_np = timeit(lambda: call(np_fn), args.repeats)
        t_jit = timeit(lambda: call(jit_fn), args.repeats)
        print(f"{name:<18} {t_np * 1e3:>8.2f}ms {t_jit * 1e3:>8.2f}ms "
              f"{t_np / t_jit:>7.1f}x")


if __name__ == "__main__":
    main()
