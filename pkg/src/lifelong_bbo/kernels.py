"""Population-geometry kernels.

Each kernel exists twice: a numba ``@njit`` loop and a vectorized numpy
version. The public names dispatch to one of them at import time. Set
``LIFELONG_BBO_DISABLE_JIT=1`` to force the numpy path (useful when numba
is unavailable or when debugging).
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("LIFELONG_BBO_DISABLE_JIT", "").strip().lower()

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


USE_JIT = HAVE_NUMBA and _FLAG not in {"1", "true", "yes", "on"}


# ---------------------------------------------------------------- numpy path


def mean_pairwise_distance_np(X: np.ndarray) -> float:
    n = X.shape[0]
    if n < 2:
        return 0.0
    diff = X[:, None, :] - X[None, :, :]
    d = np.sqrt(np.sum(diff * diff, axis=-1))
    return float(d.sum() / (n * (n - 1)))


def mean_distance_to_np(X: np.ndarray, point: np.ndarray) -> float:
    diff = X - point[None, :]
    return float(np.mean(np.sqrt(np.sum(diff * diff, axis=1))))


def max_min_distance_np(X: np.ndarray, Y: np.ndarray) -> float:
    diff = X[:, None, :] - Y[None, :, :]
    d = np.sqrt(np.sum(diff * diff, axis=-1))
    return float(d.min(axis=1).max())


# ---------------------------------------------------------------- numba path


@njit(cache=True)
def mean_pairwise_distance_jit(X):
    n, dim = X.shape
    if n < 2:
        return 0.0
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            s = 0.0
            for k in range(dim):
                t = X[i, k] - X[j, k]
                s += t * t
            total += np.sqrt(s)
    return 2.0 * total / (n * (n - 1))


@njit(cache=True)
def mean_distance_to_jit(X, point):
    n, dim = X.shape
    total = 0.0
    for i in range(n):
        s = 0.0
        for k in range(dim):
            t = X[i, k] - point[k]
            s += t * t
        total += np.sqrt(s)
    return total / n


@njit(cache=True)
def max_min_distance_jit(X, Y):
    nx, dim = X.shape
    ny = Y.shape[0]
    worst = 0.0
    for i in range(nx):
        best = np.inf
        for j in range(ny):
            s = 0.0
            for k in range(dim):
                t = X[i, k] - Y[j, k]
                s += t * t
            if s < best:
                best = s
        if best > worst:
            worst = best
    return np.sqrt(worst)


# ---------------------------------------------------------------- dispatch


def _as_f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


if USE_JIT:

    def mean_pairwise_distance(X):
        return float(mean_pairwise_distance_jit(_as_f64(X)))

    def mean_distance_to(X, point):
        return float(mean_distance_to_jit(_as_f64(X), _as_f64(point)))

    def max_min_distance(X, Y):
        return float(max_min_distance_jit(_as_f64(X), _as_f64(Y)))

else:
    mean_pairwise_distance = mean_pairwise_distance_np
    mean_distance_to = mean_distance_to_np
    max_min_distance = max_min_distance_np
