"""Paired statistics: seed-then-dataset aggregation, bootstrap CIs, permutation
nulls, multiple-comparison control, Wilcoxon, correlations, kappa, calibration."""
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from . import _kernels
from .rng import seed_rng


class StatsError(ValueError):
    pass


# --------------------------------------------------------------------------
# aggregation

@dataclass(frozen=True)
class Aggregate:
    per_dataset: dict
    grand_mean: float
    flat_mean: float
    balanced: bool
    n_datasets: int
    n_cells: int


def dataset_aggregate(cells, metric=None, condition=None):
    """Average over seeds within each dataset, then over datasets.

    ``flat_mean`` is the plain mean over all cells; the two agree whenever
    every dataset has the same number of seeds.
    """
    chosen = [c for c in cells
              if (metric is None or c.metric == metric) and (condition is None or c.condition == condition)]
    if not chosen:
        raise StatsError("no report cells to aggregate")
    groups = defaultdict(list)
    for c in chosen:
        groups[c.dataset].append(float(c.value))
    per_dataset = {k: float(np.mean(v)) for k, v in sorted(groups.items())}
    sizes = {len(v) for v in groups.values()}
    values = [float(c.value) for c in chosen]
    return Aggregate(per_dataset, float(np.mean(list(per_dataset.values()))), float(np.mean(values)),
                     len(sizes) == 1, len(per_dataset), len(chosen))


def paired_deltas(cells, treatment, baseline, metric):
    """Per-dataset seed-mean of (treatment - baseline), pairing on (dataset, seed)."""
    table = {}
    for c in cells:
        if c.metric == metric and c.condition in (treatment, baseline):
            table[(c.dataset, c.seed, c.condition)] = float(c.value)
    per = defaultdict(list)
    for (ds, seed, cond), v in table.items():
        if cond == treatment and (ds, seed, baseline) in table:
            per[ds].append(v - table[(ds, seed, baseline)])
    if not per:
        raise StatsError(f"no paired cells for {treatment!r} vs {baseline!r} on {metric!r}")
    return {ds: float(np.mean(v)) for ds, v in sorted(per.items())}


# --------------------------------------------------------------------------
# resampling

def bootstrap_indices(n, resamples, seed):
    return seed_rng(seed).integers(0, n, size=(resamples, n))


def paired_bootstrap_ci(deltas, resamples=10_000, level=0.95, seed=0):
    """Percentile bootstrap CI of the mean of per-dataset paired differences."""
    d = np.asarray(deltas, dtype=np.float64)
    if d.ndim != 1 or d.size < 2:
        raise StatsError("paired bootstrap needs at least two datasets")
    if not 0 < level < 1:
        raise StatsError("level must lie in (0, 1)")
    means = _kernels.resample_means(d, bootstrap_indices(d.size, resamples, seed))
    alpha = (1 - level) / 2
    lo, hi = np.quantile(means, [alpha, 1 - alpha])
    return float(lo), float(hi)


@dataclass(frozen=True)
class NullResult:
    observed: float
    null_mean: float
    null_std: float
    z: float
    p: float
    degenerate: bool


def permutation_null_z(statistic_fn, values, permutations=1000, seed=0, alternative="greater"):
    """z-score of ``statistic_fn(values)`` against row-permutation nulls.

    ``values`` is permuted along its first axis; ``statistic_fn`` closes over
    whatever stays fixed. ``p`` is the add-one empirical tail probability.
    A zero-variance null leaves ``z`` as NaN with ``degenerate=True``.
    """
    values = np.asarray(values)
    observed = float(statistic_fn(values))
    rng = seed_rng(seed)
    null = np.array([float(statistic_fn(values[rng.permutation(values.shape[0])]))
                     for _ in range(permutations)])
    mu, sd = float(null.mean()), float(null.std(ddof=1)) if permutations > 1 else 0.0
    degenerate = not sd > 0
    z = math.nan if degenerate else (observed - mu) / sd
    if alternative == "greater":
        hits = np.sum(null >= observed)
    elif alternative == "less":
        hits = np.sum(null <= observed)
    elif alternative == "two-sided":
        hits = np.sum(np.abs(null - mu) >= abs(observed - mu))
    else:
        raise StatsError(f"unknown alternative {alternative!r}")
    return NullResult(observed, mu, sd, z, float((hits + 1) / (permutations + 1)), degenerate)


# --------------------------------------------------------------------------
# multiple comparisons

def _check_p(p):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or np.any((p < 0) | (p > 1)):
        raise StatsError("p-values must be a 1-d vector in [0, 1]")
    return p


def bonferroni(pvalues, alpha=0.05):
    p = _check_p(pvalues)
    return p <= alpha / max(p.size, 1)


def holm(pvalues, alpha=0.05):
    """Holm step-down: reject p_(i) while p_(i) <= alpha / (m - i + 1)."""
    p = _check_p(pvalues)
    m = p.size
    order = np.argsort(p, kind="stable")
    reject = np.zeros(m, dtype=bool)
    for rank, i in enumerate(order):
        if p[i] <= alpha / (m - rank):
            reject[i] = True
        else:
            break
    return reject


def bh_fdr(pvalues, q=0.05):
    """Benjamini-Hochberg step-up at level q."""
    p = _check_p(pvalues)
    m = p.size
    order = np.argsort(p, kind="stable")
    passed = p[order] <= q * np.arange(1, m + 1) / m
    reject = np.zeros(m, dtype=bool)
    if passed.any():
        k = int(np.flatnonzero(passed).max())
        reject[order[:k + 1]] = True
    return reject


# --------------------------------------------------------------------------
# rank statistics

def average_ranks(x):
    """1-based ranks with ties sharing their average rank."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size)
    sx = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p: float
    n: int
    method: str


def _exact_upper_tail(doubled_ranks, w2):
    """P(W+ >= w) under random signs; ranks are doubled so ties stay integral."""
    total = int(sum(doubled_ranks))
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in doubled_ranks:
        r = int(r)
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:total + 1 - r]
        counts = counts + shifted
    hits = sum(counts[w2:])
    return float(hits) / float(2 ** len(doubled_ranks))


def wilcoxon_signed_rank(a, b=None, alternative="greater", exact_max_n=20):
    """Signed-rank test of paired differences ``a - b`` (zeros dropped).

    ``alternative="greater"`` tests whether differences tend to be positive.
    Exact null distribution for n <= ``exact_max_n``, otherwise the normal
    approximation with tie correction.
    """
    d = np.asarray(a, dtype=np.float64)
    if b is not None:
        d = d - np.asarray(b, dtype=np.float64)
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise StatsError("all paired differences are zero")
    ranks = average_ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if alternative not in ("greater", "less", "two-sided"):
        raise StatsError(f"unknown alternative {alternative!r}")
    total = n * (n + 1) / 2
    if n <= exact_max_n:
        doubled = np.rint(2 * ranks).astype(np.int64)
        upper = _exact_upper_tail(doubled, int(round(2 * w_plus)))
        lower = _exact_upper_tail(doubled, int(round(2 * (total - w_plus))))
        p = {"greater": upper, "less": lower, "two-sided": min(1.0, 2 * min(upper, lower))}[alternative]
        return WilcoxonResult(w_plus, p, n, "exact")
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24 - np.sum(tie_counts ** 3 - tie_counts) / 48
    z = (w_plus - total / 2) / math.sqrt(var)
    p = {"greater": float(ndtr(-z)), "less": float(ndtr(z)),
         "two-sided": float(min(1.0, 2 * ndtr(-abs(z))))}[alternative]
    return WilcoxonResult(w_plus, p, n, "normal")


# --------------------------------------------------------------------------
# association and agreement

def correlation(x, y, kind="pearson"):
    """Pearson or Spearman (Pearson on average ranks). NaN if either side is constant."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size or x.size < 2:
        raise StatsError("correlation needs two equal-length vectors of length >= 2")
    if kind == "spearman":
        x, y = average_ranks(x), average_ranks(y)
    elif kind != "pearson":
        raise StatsError(f"unknown correlation {kind!r}")
    xc, yc = x - x.mean(), y - y.mean()
    sxx, syy = float(xc @ xc), float(yc @ yc)
    if sxx == 0 or syy == 0:
        warnings.warn("zero-variance input; correlation undefined", RuntimeWarning, stacklevel=2)
        return math.nan
    r = float(xc @ yc) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def cohen_kappa(labels_a, labels_b):
    """(p_o - p_e) / (1 - p_e); defined as 1 when p_e == 1."""
    a = np.asarray(labels_a, dtype=np.int64)
    b = np.asarray(labels_b, dtype=np.int64)
    if a.shape != b.shape or a.ndim != 1 or a.size == 0:
        raise StatsError("kappa needs two equal-length non-empty label vectors")
    k = int(max(a.max(), b.max())) + 1
    conf = np.zeros((k, k), dtype=np.int64)
    np.add.at(conf, (a, b), 1)
    n = int(a.size)
    # integer form (n * agree - sum r_i c_i) / (n^2 - sum r_i c_i): one rounding only
    agree = int(np.trace(conf))
    chance = sum(int(r) * int(c) for r, c in zip(conf.sum(axis=1), conf.sum(axis=0)))
    if chance == n * n:
        warnings.warn("both raters are constant and equal; kappa defined as 1", RuntimeWarning, stacklevel=2)
        return 1.0
    return (n * agree - chance) / (n * n - chance)


# --------------------------------------------------------------------------
# calibration

PROB_FLOOR = 1e-12


def calibration(probs, labels, bins=15):
    """(ECE over equal-width top-probability bins, NLL with a 1e-12 floor).

    Confidence ``c`` falls in bin ``min(floor(c * bins), bins - 1)``.
    """
    P = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if P.ndim != 2 or P.shape[0] != y.size:
        raise StatsError("probs must be (q, C) with one label per row")
    conf = P.max(axis=1)
    pred = P.argmax(axis=1)
    hit = (pred == y).astype(np.float64)
    idx = np.minimum(np.floor(conf * bins).astype(np.int64), bins - 1)
    ece = 0.0
    n = y.size
    for b in range(bins):
        sel = idx == b
        if sel.any():
            ece += sel.sum() / n * abs(hit[sel].mean() - conf[sel].mean())
    nll = float(-np.mean(np.log(np.maximum(P[np.arange(n), y], PROB_FLOOR)))) + 0.0
    return float(ece), nll


def accuracy(probs, labels):
    P = np.asarray(probs)
    return float(np.mean(P.argmax(axis=1) == np.asarray(labels)))
