"""Representation geometry: spectral summaries, TwoNN intrinsic dimension,
silhouette, and a JS-divergence screen for columns with identical marginals."""
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .data import CATEGORICAL


class GeometryError(ValueError):
    pass


SV_CUTOFF = 1e-12


# --------------------------------------------------------------------------
# spectrum

def singular_values(reps):
    """Descending singular values of the mean-centred matrix."""
    X = np.asarray(reps, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise GeometryError("need an n x D matrix with n >= 2")
    return np.linalg.svd(X - X.mean(axis=0), compute_uv=False)


def _positive(s):
    if s.size == 0 or s[0] <= 0:
        return s[:0]
    return s[s > SV_CUTOFF * s[0]]


def effective_rank_from_sv(s):
    s = _positive(np.asarray(s, dtype=np.float64))
    if s.size == 0:
        return 1.0
    p = s ** 2 / np.sum(s ** 2)
    return float(np.exp(-np.sum(p * np.log(p))))


def participation_ratio_from_sv(s):
    s = _positive(np.asarray(s, dtype=np.float64))
    if s.size == 0:
        return 1.0
    lam = s ** 2
    return float(lam.sum() ** 2 / np.sum(lam ** 2))


def _degenerate(s):
    if _positive(s).size == 0:
        warnings.warn("representation is constant after centring; rank defined as 1",
                      RuntimeWarning, stacklevel=3)
        return True
    return False


def effective_rank(reps):
    """exp of the entropy of the normalised squared singular values."""
    s = singular_values(reps)
    _degenerate(s)
    return effective_rank_from_sv(s)


def participation_ratio(reps):
    """(sum s^2)^2 / sum s^4 over the centred spectrum."""
    s = singular_values(reps)
    _degenerate(s)
    return participation_ratio_from_sv(s)


@dataclass(frozen=True)
class SpectrumSummary:
    singular_values: np.ndarray
    effective_rank: float
    participation_ratio: float
    degenerate: bool


def spectrum_summary(reps):
    s = singular_values(reps)
    deg = _degenerate(s)
    return SpectrumSummary(s, effective_rank_from_sv(s), participation_ratio_from_sv(s), deg)


# --------------------------------------------------------------------------
# TwoNN

@dataclass(frozen=True)
class TwoNNResult:
    dimension: float
    n_used: int
    n_duplicates: int


def twonn(reps, trim_fraction=0.0):
    """TwoNN estimate with its bookkeeping.

    Duplicate rows are dropped first. ``mu_i = r2 / r1`` and the estimate is
    the maximum-likelihood ``n' / sum(log mu_i)``; ``trim_fraction`` drops
    that share of the largest ratios before fitting.
    """
    X = np.asarray(reps, dtype=np.float64)
    if X.ndim != 2:
        raise GeometryError("need an n x D matrix")
    uniq = np.unique(X, axis=0)
    dup = X.shape[0] - uniq.shape[0]
    if uniq.shape[0] < 10:
        raise GeometryError(f"TwoNN needs at least 10 distinct points, got {uniq.shape[0]}")
    if not 0.0 <= trim_fraction < 1.0:
        raise GeometryError("trim_fraction must lie in [0, 1)")
    r1, r2 = _kernels.two_nearest(uniq)
    mu = np.sort(r2 / r1)
    keep = mu.size - int(math.floor(trim_fraction * mu.size))
    mu = mu[:keep]
    return TwoNNResult(float(mu.size / np.sum(np.log(mu))), int(mu.size), int(dup))


def twonn_intrinsic_dimension(reps, trim_fraction=0.0):
    res = twonn(reps, trim_fraction)
    if res.n_duplicates:
        warnings.warn(f"dropped {res.n_duplicates} duplicate rows", RuntimeWarning, stacklevel=2)
    return res.dimension


# --------------------------------------------------------------------------
# silhouette

def _cosine_distance_matrix(X):
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms == 0):
        raise GeometryError("zero vector under cosine distance")
    U = X / norms[:, None]
    D = 1.0 - U @ U.T
    np.fill_diagonal(D, 0.0)
    return np.maximum(D, 0.0)


def silhouette_samples(reps, labels, metric="cosine"):
    X = np.asarray(reps, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (X.shape[0],):
        raise GeometryError("one label per row required")
    classes, y = np.unique(y, return_inverse=True)
    if classes.size < 2:
        raise GeometryError("silhouette needs at least two classes")
    if metric == "cosine":
        D = _cosine_distance_matrix(X)
    elif metric == "l2":
        D = np.sqrt(_kernels.pairwise_sqdist(X, X))
    else:
        raise GeometryError(f"unknown metric {metric!r}")
    M = _kernels.class_mean_distances(D, y, classes.size)
    n = X.shape[0]
    a = M[np.arange(n), y]
    other = M.copy()
    other[np.arange(n), y] = np.inf
    b = other.min(axis=1)
    single = np.isnan(a)
    if single.any():
        warnings.warn("singleton class members get silhouette 0", RuntimeWarning, stacklevel=2)
    denom = np.maximum(a, b)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    s[single] = 0.0
    return s


def silhouette(reps, labels, metric="cosine"):
    """Mean of (b - a) / max(a, b); cosine distance by default."""
    return float(np.mean(silhouette_samples(reps, labels, metric)))


# --------------------------------------------------------------------------
# JS marginal screen

JS_BINS = 16


def column_histograms(table_or_values, column_kinds=None, bins=JS_BINS):
    """Per-column probability vectors on shared bins, plus a per-column categorical flag.

    Categorical columns use one bin per code seen anywhere in the table;
    numeric columns use ``bins`` equal-width bins over the joint range.
    """
    if hasattr(table_or_values, "values") and hasattr(table_or_values, "column_kinds"):
        V = table_or_values.values
        kinds = table_or_values.column_kinds
    else:
        V = np.asarray(table_or_values, dtype=np.float64)
        kinds = column_kinds or ("numeric",) * V.shape[1]
    cat = [j for j, k in enumerate(kinds) if k == CATEGORICAL]
    num = [j for j, k in enumerate(kinds) if k != CATEGORICAL]
    hist = [None] * V.shape[1]
    if cat:
        codes = np.unique(V[:, cat])
        for j in cat:
            idx = np.searchsorted(codes, V[:, j])
            hist[j] = np.bincount(idx, minlength=codes.size).astype(np.float64)
    if num:
        lo, hi = float(V[:, num].min()), float(V[:, num].max())
        width = (hi - lo) / bins
        for j in num:
            if width > 0:
                idx = np.minimum(((V[:, j] - lo) / width).astype(np.int64), bins - 1)
            else:
                idx = np.zeros(V.shape[0], dtype=np.int64)
            hist[j] = np.bincount(idx, minlength=bins).astype(np.float64)
    return [h / h.sum() for h in hist], tuple(k == CATEGORICAL for k in kinds)


def js_divergence(p, q):
    """Jensen-Shannon divergence in nats (maximum log 2)."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    m = (p + q) / 2

    def kl(a):
        nz = a > 0
        return float(np.sum(a[nz] * np.log(a[nz] / m[nz])))
    return max(0.0, (kl(p) + kl(q)) / 2)


@dataclass(frozen=True)
class MarginalScreen:
    largest: int
    clusters: tuple
    divergence: np.ndarray


def js_marginal_screen(table, tolerance=0.05, column_kinds=None):
    """Largest set of columns whose 1-D marginals agree within ``tolerance``.

    Greedy: the lowest unassigned column seeds a cluster, and every later
    unassigned column within ``tolerance`` of the seed joins it.
    """
    if not tolerance > 0:
        raise GeometryError("tolerance must be positive")
    hist, is_cat = column_histograms(table, column_kinds)
    d = len(hist)
    # numeric and categorical columns never share bins, so they stay apart
    J = np.full((d, d), math.log(2))
    for i in range(d):
        J[i, i] = 0.0
        for j in range(i + 1, d):
            if is_cat[i] == is_cat[j]:
                J[i, j] = J[j, i] = js_divergence(hist[i], hist[j])
    left = list(range(d))
    clusters = []
    while left:
        seed = left[0]
        members = [j for j in left if J[seed, j] <= tolerance]
        clusters.append(tuple(members))
        left = [j for j in left if j not in members]
    return MarginalScreen(max(len(c) for c in clusters), tuple(clusters), J)
