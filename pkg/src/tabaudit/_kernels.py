"""Hot numeric loops, with a numba path and a pure-numpy fallback.

The backend is chosen once at import time. Set ``TABAUDIT_NO_NUMBA=1`` to
force the numpy path (useful for debugging, or where numba is missing).
Both paths are importable directly as ``<name>_numba`` / ``<name>_numpy`` so
the benchmark and the tests can compare them.
"""
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and os.environ.get("TABAUDIT_NO_NUMBA", "") not in ("1", "true", "yes")
BACKEND = "numba" if USE_NUMBA else "numpy"

_CHUNK = 512


def _jit(fn):
    if numba is None:
        return fn
    return numba.njit(cache=True)(fn)


# --------------------------------------------------------------------------
# pairwise squared euclidean distances, computed from explicit differences
# (no |a|^2 + |b|^2 - 2ab expansion, so exact ties stay exact)

def pairwise_sqdist_numpy(A, B):
    A = np.ascontiguousarray(A, dtype=np.float64)
    B = np.ascontiguousarray(B, dtype=np.float64)
    out = np.empty((A.shape[0], B.shape[0]))
    for s in range(0, A.shape[0], _CHUNK):
        diff = A[s:s + _CHUNK, None, :] - B[None, :, :]
        out[s:s + _CHUNK] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


@_jit
def _pairwise_sqdist_loop(A, B):
    n, m, d = A.shape[0], B.shape[0], A.shape[1]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for k in range(d):
                t = A[i, k] - B[j, k]
                acc += t * t
            out[i, j] = acc
    return out


def pairwise_sqdist_numba(A, B):
    return _pairwise_sqdist_loop(np.ascontiguousarray(A, dtype=np.float64),
                                 np.ascontiguousarray(B, dtype=np.float64))


# --------------------------------------------------------------------------
# first and second nearest-neighbour distances (TwoNN)

def two_nearest_numpy(X):
    X = np.ascontiguousarray(X, dtype=np.float64)
    n = X.shape[0]
    r1 = np.empty(n)
    r2 = np.empty(n)
    for s in range(0, n, _CHUNK):
        d2 = pairwise_sqdist_numpy(X[s:s + _CHUNK], X)
        rows = np.arange(d2.shape[0])
        d2[rows, rows + s] = np.inf
        part = np.partition(d2, 1, axis=1)[:, :2]
        r1[s:s + _CHUNK] = np.sqrt(part[:, 0])
        r2[s:s + _CHUNK] = np.sqrt(part[:, 1])
    return r1, r2


@_jit
def _two_nearest_loop(X):
    n, d = X.shape
    r1 = np.empty(n)
    r2 = np.empty(n)
    for i in range(n):
        b1 = np.inf
        b2 = np.inf
        for j in range(n):
            if j == i:
                continue
            acc = 0.0
            for k in range(d):
                t = X[i, k] - X[j, k]
                acc += t * t
            if acc < b1:
                b2 = b1
                b1 = acc
            elif acc < b2:
                b2 = acc
        r1[i] = np.sqrt(b1)
        r2[i] = np.sqrt(b2)
    return r1, r2


def two_nearest_numba(X):
    return _two_nearest_loop(np.ascontiguousarray(X, dtype=np.float64))


# --------------------------------------------------------------------------
# mean distance to the k nearest other points (hub centrality)

def mean_knn_distance_numpy(X, k):
    d = np.sqrt(pairwise_sqdist_numpy(X, X))
    np.fill_diagonal(d, np.inf)
    part = np.sort(d, axis=1)[:, :k]
    return part.mean(axis=1)


@_jit
def _mean_knn_distance_loop(X, k):
    n, dim = X.shape
    out = np.empty(n)
    row = np.empty(n - 1)
    for i in range(n):
        c = 0
        for j in range(n):
            if j == i:
                continue
            acc = 0.0
            for q in range(dim):
                t = X[i, q] - X[j, q]
                acc += t * t
            row[c] = np.sqrt(acc)
            c += 1
        srt = np.sort(row)
        s = 0.0
        for q in range(k):
            s += srt[q]
        out[i] = s / k
    return out


def mean_knn_distance_numba(X, k):
    return _mean_knn_distance_loop(np.ascontiguousarray(X, dtype=np.float64), int(k))


# --------------------------------------------------------------------------
# per-point class-mean distances for the silhouette

def class_mean_distances_numpy(D, labels, n_classes):
    """(n, C) matrix: mean distance from each point to each class, self excluded."""
    onehot = np.zeros((D.shape[0], n_classes))
    onehot[np.arange(D.shape[0]), labels] = 1.0
    sums = D @ onehot
    counts = np.broadcast_to(onehot.sum(axis=0), sums.shape).copy()
    counts[np.arange(D.shape[0]), labels] -= 1.0
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, sums / np.where(counts > 0, counts, 1.0), np.nan)


@_jit
def _class_mean_distances_loop(D, labels, n_classes):
    n = D.shape[0]
    sums = np.zeros((n, n_classes))
    counts = np.zeros((n, n_classes))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            c = labels[j]
            sums[i, c] += D[i, j]
            counts[i, c] += 1.0
    out = np.empty((n, n_classes))
    for i in range(n):
        for c in range(n_classes):
            out[i, c] = sums[i, c] / counts[i, c] if counts[i, c] > 0 else np.nan
    return out


def class_mean_distances_numba(D, labels, n_classes):
    return _class_mean_distances_loop(np.ascontiguousarray(D, dtype=np.float64),
                                      np.ascontiguousarray(labels, dtype=np.int64), int(n_classes))


# --------------------------------------------------------------------------
# bootstrap resample means

def resample_means_numpy(values, idx):
    return np.asarray(values, dtype=np.float64)[idx].mean(axis=1)


@_jit
def _resample_means_loop(values, idx):
    b, n = idx.shape
    out = np.empty(b)
    for r in range(b):
        acc = 0.0
        for j in range(n):
            acc += values[idx[r, j]]
        out[r] = acc / n
    return out


def resample_means_numba(values, idx):
    return _resample_means_loop(np.ascontiguousarray(values, dtype=np.float64),
                                np.ascontiguousarray(idx, dtype=np.int64))


if USE_NUMBA:
    pairwise_sqdist = pairwise_sqdist_numba
    two_nearest = two_nearest_numba
    mean_knn_distance = mean_knn_distance_numba
    class_mean_distances = class_mean_distances_numba
    resample_means = resample_means_numba
else:
    pairwise_sqdist = pairwise_sqdist_numpy
    two_nearest = two_nearest_numpy
    mean_knn_distance = mean_knn_distance_numpy
    class_mean_distances = class_mean_distances_numpy
    resample_means = resample_means_numpy
