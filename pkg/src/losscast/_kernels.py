"""Hot numeric kernels with numba-compiled and pure-numpy implementations.

Every kernel exists in two variants that produce bitwise-identical results:

* ``*_jit``: compiled with ``numba.njit(cache=True)``;
* ``*_np``:  plain numpy (a python loop where the recurrence is sequential).

The dispatch at import time picks the jit variant unless numba is missing or
the environment variable ``LOSSCAST_NUMBA`` is set to ``0``/``off``/``false``.
``benchmarks/bench_kernels.py`` times the two paths against each other.

Bitwise equivalence relies on two facts: numpy's ``cumsum`` accumulates in the
same left-to-right order as a scalar running sum, and any stable argsort
yields the same permutation regardless of algorithm.
"""

from __future__ import annotations

import os

import numpy as np

_flag = os.environ.get("LOSSCAST_NUMBA", "1").strip().lower()
_want_numba = _flag not in ("0", "off", "false", "no")

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


USING_NUMBA = HAVE_NUMBA and _want_numba


# ---------------------------------------------------------------------------
# Exponential moving average (loss-curve smoothing)
# ---------------------------------------------------------------------------

def ema_smooth_np(x: np.ndarray, coeff: float) -> np.ndarray:
    out = np.empty_like(x)
    s = x[0]
    out[0] = s
    for t in range(1, x.size):
        s = coeff * s + (1.0 - coeff) * x[t]
        out[t] = s
    return out


@njit(cache=True)
def ema_smooth_jit(x, coeff):
    out = np.empty_like(x)
    s = x[0]
    out[0] = s
    for t in range(1, x.size):
        s = coeff * s + (1.0 - coeff) * x[t]
        out[t] = s
    return out


# ---------------------------------------------------------------------------
# Max average slope over sliding windows (instability filter)
# ---------------------------------------------------------------------------

def max_window_slope_np(steps: np.ndarray, losses: np.ndarray, window: int) -> float:
    # window counts points; slope over [i, i+window-1]
    if window < 2 or steps.size < window:
        return -np.inf
    w = window - 1
    dl = losses[w:] - losses[:-w]
    ds = steps[w:] - steps[:-w]
    return float(np.max(dl / ds))


@njit(cache=True)
def max_window_slope_jit(steps, losses, window):
    if window < 2 or steps.size < window:
        return -np.inf
    w = window - 1
    best = -np.inf
    for i in range(steps.size - w):
        slope = (losses[i + w] - losses[i]) / (steps[i + w] - steps[i])
        if slope > best:
            best = slope
    return best


# ---------------------------------------------------------------------------
# Exact greedy split search (gradient-boosted trees)
# ---------------------------------------------------------------------------
#
# Both variants scan every feature of a node and return
# (feature, threshold, gain, n_left). Candidate boundaries sit between
# distinct consecutive sorted values; gain is the SSE reduction
# ls^2/nl + rs^2/nr - total^2/n. Ties break toward the lowest feature index,
# then the lowest threshold (guaranteed by strict ">" on left-to-right scans
# over stably sorted columns).

def best_split_np(X: np.ndarray, y: np.ndarray, min_leaf: int):
    n, n_feat = X.shape
    # cumsum accumulates left-to-right, matching the jit running sum bitwise
    total = float(np.cumsum(y)[-1])
    base = total * total / n
    best_feat = -1
    best_thr = 0.0
    best_gain = 0.0
    best_nl = 0
    if n < 2 * min_leaf:
        return best_feat, best_thr, best_gain, best_nl
    ks = np.arange(min_leaf, n - min_leaf + 1)
    for f in range(n_feat):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        prefix = np.cumsum(y[order])
        ls = prefix[ks - 1]
        rs = total - ls
        gains = ls * ls / ks + rs * rs / (n - ks) - base
        gains[xs[ks - 1] == xs[ks]] = -np.inf
        j = int(np.argmax(gains))
        if gains[j] > best_gain:
            best_gain = float(gains[j])
            best_feat = f
            k = int(ks[j])
            best_thr = 0.5 * (xs[k - 1] + xs[k])
            best_nl = k
    return best_feat, best_thr, best_gain, best_nl


@njit(cache=True)
def best_split_jit(X, y, min_leaf):
    n, n_feat = X.shape
    total = 0.0
    for i in range(n):
        total += y[i]
    base = total * total / n
    best_feat = -1
    best_thr = 0.0
    best_gain = 0.0
    best_nl = 0
    for f in range(n_feat):
        order = np.argsort(X[:, f], kind="mergesort")
        ls = 0.0
        for k in range(1, n - min_leaf + 1):
            ls += y[order[k - 1]]
            if k < min_leaf:
                continue
            xa = X[order[k - 1], f]
            xb = X[order[k], f]
            if xa == xb:
                continue
            rs = total - ls
            gain = ls * ls / k + rs * rs / (n - k) - base
            if gain > best_gain:
                best_gain = gain
                best_feat = f
                best_thr = 0.5 * (xa + xb)
                best_nl = k
    return best_feat, best_thr, best_gain, best_nl


# ---------------------------------------------------------------------------
# Forest traversal
# ---------------------------------------------------------------------------
#
# Trees are flattened into parallel arrays; `offsets[t]` is the root index of
# tree t and internal nodes satisfy feature >= 0. Rows go left when
# x[feature] <= threshold.

def forest_predict_np(X, feature, threshold, left, right, value, offsets):
    n = X.shape[0]
    out = np.zeros(n, dtype=np.float64)
    rows = np.arange(n)
    for t in range(offsets.size):
        idx = np.full(n, offsets[t], dtype=np.int64)
        active = feature[idx] >= 0
        while np.any(active):
            cur = idx[active]
            go_left = X[rows[active], feature[cur]] <= threshold[cur]
            idx[active] = np.where(go_left, left[cur], right[cur])
            active = feature[idx] >= 0
        out += value[idx]
    return out


@njit(cache=True)
def forest_predict_jit(X, feature, threshold, left, right, value, offsets):
    n = X.shape[0]
    out = np.zeros(n, dtype=np.float64)
    for i in range(n):
        acc = 0.0
        for t in range(offsets.size):
            node = offsets[t]
            while feature[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            acc += value[node]
        out[i] = acc
    return out


if USING_NUMBA:
    ema_smooth = ema_smooth_jit
    max_window_slope = max_window_slope_jit
    best_split = best_split_jit
    forest_predict = forest_predict_jit
else:
    ema_smooth = ema_smooth_np
    max_window_slope = max_window_slope_np
    best_split = best_split_np
    forest_predict = forest_predict_np
