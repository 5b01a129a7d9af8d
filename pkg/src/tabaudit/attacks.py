"""Context-set perturbations and the grid that scores readouts against them.

Every attack returns a :class:`PoisonedInstance` whose provenance is enough
to rebuild the clean instance exactly (:meth:`PoisonedInstance.restore`).
Attacks only ever append context rows, relabel context rows, or rewrite
feature values; query labels are never touched.
"""
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import softmax

from . import _kernels
from .data import NUMERIC, Table, stratified_split
from .readouts import ReadoutError, get_readout, linear_probe, ridge_fit, standardizer
from .report import ReportCell
from .rng import cell_rng


class AttackError(ValueError):
    pass


ATTACK_KINDS = ("none", "noise_pad", "hub_poison", "centroid_inj", "boundary_poison",
                "mono_cube", "mono_softexp", "mono_rank", "svd_hide", "nullspace_pgd")

# fixed before any evaluation
ATTACK_DEFAULTS = {
    "none": {},
    "noise_pad": {"sigma_mult": 4.0, "pad_frac": 0.2, "label_mode": "uniform"},
    "hub_poison": {"hub_frac": 0.15, "k": 5},
    "centroid_inj": {"per_class": None},
    "boundary_poison": {"margin": 0.20},
    "mono_cube": {},
    "mono_softexp": {"tau": 1.0},
    "mono_rank": {},
    "svd_hide": {"top_frac": 0.25, "damp": 10.0},
    "nullspace_pgd": {"eta": 0.01, "steps": 200, "budget": 1.0, "cutoff_rel": 1e-6,
                      "min_directions": 5, "lam": 1.0},
}


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ATTACK_DEFAULTS:
            raise AttackError(f"unknown attack {self.kind!r}; expected one of {ATTACK_KINDS}")
        unknown = set(self.params) - set(ATTACK_DEFAULTS[self.kind])
        if unknown:
            raise AttackError(f"{self.kind}: unknown parameters {sorted(unknown)}")
        merged = dict(ATTACK_DEFAULTS[self.kind])
        merged.update(self.params)
        for key in ("pad_frac", "hub_frac", "top_frac"):
            if key in merged and not 0 < float(merged[key]) <= 1:
                raise AttackError(f"{self.kind}: {key} must lie in (0, 1]")
        object.__setattr__(self, "params", merged)


@dataclass
class Instance:
    context: Table
    query: Table

    @classmethod
    def from_split(cls, table, split):
        return cls(table.take(split.context_idx), table.take(split.query_idx))


@dataclass
class PoisonedInstance:
    context: Table
    query: Table
    kind: str
    appended: int = 0
    relabeled: dict = field(default_factory=dict)
    clean_context_values: np.ndarray | None = None
    clean_query_values: np.ndarray | None = None
    clean_kinds: tuple | None = None
    excluded: str | None = None
    info: dict = field(default_factory=dict)

    def restore(self):
        """The clean instance, rebuilt from provenance alone."""
        ctx = self.context
        if self.appended:
            ctx = ctx.take(np.arange(ctx.n - self.appended))
        if self.relabeled:
            labels = ctx.labels.copy()
            for i, old in self.relabeled.items():
                labels[i] = old
            ctx = replace(ctx, labels=labels)
        qry = self.query
        if self.clean_context_values is not None:
            ctx = replace(ctx, values=self.clean_context_values.copy())
        if self.clean_query_values is not None:
            qry = replace(qry, values=self.clean_query_values.copy())
        if self.clean_kinds is not None:
            ctx = replace(ctx, column_kinds=self.clean_kinds)
            qry = replace(qry, column_kinds=self.clean_kinds)
        return Instance(ctx, qry)


def _ceil_frac(frac, n):
    # guards against 0.15 * 100 = 15.000000000000002
    return int(math.ceil(round(frac * n, 9)))


def _rng(instance, seed, kind):
    return cell_rng(instance.context.name, seed, f"attack/{kind}")


def _need_classes(ctx):
    if ctx.labels is None or np.unique(ctx.labels).size < 2:
        raise AttackError("attack needs a context with at least two classes")


def _append(instance, X_new, y_new, kind, **info):
    ctx = instance.context
    values = np.vstack([ctx.values, X_new])
    if ctx.labels is not None:
        new = replace(ctx, values=values, labels=np.concatenate([ctx.labels, y_new]).astype(np.int64))
    else:
        new = replace(ctx, values=values, targets=np.concatenate([ctx.targets, y_new]))
    return PoisonedInstance(new, instance.query, kind, appended=len(X_new), info=info)


def _relabel(instance, rows, new_labels, kind, **info):
    ctx = instance.context
    labels = ctx.labels.copy()
    changed = {}
    for i, lab in zip(rows, new_labels):
        i = int(i)
        if labels[i] != lab:
            changed[i] = int(labels[i])
            labels[i] = int(lab)
    return PoisonedInstance(replace(ctx, labels=labels), instance.query, kind, relabeled=changed, info=info)


def _rewrite(instance, ctx_values, qry_values, kind, kinds=None, **info):
    ctx, qry = instance.context, instance.query
    new_ctx = replace(ctx, values=ctx_values)
    new_qry = replace(qry, values=qry_values)
    if kinds is not None:
        new_ctx = replace(new_ctx, column_kinds=kinds)
        new_qry = replace(new_qry, column_kinds=kinds)
    return PoisonedInstance(new_ctx, new_qry, kind, clean_context_values=ctx.values.copy(),
                            clean_query_values=qry.values.copy(),
                            clean_kinds=None if kinds is None else ctx.column_kinds, info=info)


# --------------------------------------------------------------------------
# appended rows

def noise_pad(instance, sigma_mult=4.0, pad_frac=0.2, seed=0, label_mode="uniform"):
    """Append ``ceil(pad_frac * n)`` rows sampled per column from the context.

    Numeric cells get Gaussian noise with std ``sigma_mult`` times the column
    std; categorical cells are plain empirical draws. Labels are uniform over
    the context's classes (``label_mode="empirical"`` resamples the labels).
    """
    ctx = instance.context
    if ctx.n < 1:
        raise AttackError("empty context")
    rng = _rng(instance, seed, "noise_pad")
    m = _ceil_frac(pad_frac, ctx.n)
    X = np.empty((m, ctx.d))
    for j in range(ctx.d):
        col = ctx.values[:, j]
        X[:, j] = col[rng.integers(0, ctx.n, size=m)]
        if ctx.column_kinds[j] == NUMERIC:
            sd = col.std()
            if sd > 0:
                X[:, j] += rng.normal(0.0, sigma_mult * sd, size=m)
    if ctx.labels is not None:
        if label_mode == "uniform":
            classes = np.unique(ctx.labels)
            y = classes[rng.integers(0, classes.size, size=m)]
        elif label_mode == "empirical":
            y = ctx.labels[rng.integers(0, ctx.n, size=m)]
        else:
            raise AttackError(f"unknown label_mode {label_mode!r}")
    else:
        y = ctx.targets[rng.integers(0, ctx.n, size=m)]
    return _append(instance, X, y, "noise_pad")


def centroid_inj(instance, per_class=None, seed=0):
    """Per class c, ``max(3, n // 100)`` copies of its centroid labelled ``(c + 1) mod C``."""
    ctx = instance.context
    _need_classes(ctx)
    C = ctx.n_classes
    per = max(3, ctx.n // 100) if per_class is None else int(per_class)
    rows, labels = [], []
    for c in range(C):
        members = ctx.values[ctx.labels == c]
        if members.size == 0:
            continue
        mu = members.mean(axis=0)
        rows.extend([mu] * per)
        labels.extend([(c + 1) % C] * per)
    return _append(instance, np.array(rows), np.array(labels), "centroid_inj", per_class=per)


# --------------------------------------------------------------------------
# label flips

def hub_scores(X, k=5):
    """Mean distance to the k nearest other rows, in context-standardised space."""
    mean, scale = standardizer(X)
    return _kernels.mean_knn_distance((np.asarray(X, dtype=np.float64) - mean) / scale, k)


def _flip_labels(labels, C, rng):
    if C == 2:
        return 1 - labels
    return (labels + rng.integers(1, C, size=labels.size)) % C


def hub_poison(instance, hub_frac=0.15, k=5, seed=0):
    """Flip the labels of the ``ceil(hub_frac * n)`` rows with the lowest hub score."""
    ctx = instance.context
    _need_classes(ctx)
    if ctx.n < k + 1:
        raise AttackError(f"hub_poison needs n >= k + 1 = {k + 1}")
    score = hub_scores(ctx.values, k)
    rows = np.argsort(score, kind="stable")[:_ceil_frac(hub_frac, ctx.n)]
    new = _flip_labels(ctx.labels[rows], ctx.n_classes, _rng(instance, seed, "hub_poison"))
    return _relabel(instance, rows, new, "hub_poison", hubs=rows.tolist())


def boundary_margin_rows(X, y, margin=0.2, seed=0, name="context"):
    """Rows whose cross-fitted probe logit gap is inside the margin.

    Context rows are split into two seeded folds; a probe fit on one fold
    scores the other. For a row with top class ``a`` and runner-up ``b`` the
    threshold is ``margin * |(w_a - w_b) . (mu_a - mu_b)|``: the logit change
    produced by moving ``margin`` of the way between the two class centroids.
    Returns ``(rows, runner_up)``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    rng = cell_rng(name, seed, "attack/boundary_poison/folds")
    perm = rng.permutation(X.shape[0])
    folds = (np.sort(perm[::2]), np.sort(perm[1::2]))
    rows, runner = [], []
    for score_fold, fit_fold in (folds, folds[::-1]):
        try:
            probe = linear_probe(X[fit_fold], y[fit_fold], X[:0], y[:0], seed=seed)
        except ReadoutError as exc:
            raise AttackError(f"boundary probe failed: {exc}") from exc
        Z_fit = (X[fit_fold] - probe.mean) / probe.scale
        mu = {c: Z_fit[y[fit_fold] == c].mean(axis=0) for c in probe.classes}
        logits = probe.decision_function(X[score_fold])
        order = np.argsort(-logits, axis=1, kind="stable")
        for r, i in enumerate(score_fold):
            a, b = order[r, 0], order[r, 1]
            gap = logits[r, a] - logits[r, b]
            ca, cb = probe.classes[a], probe.classes[b]
            thr = margin * abs((probe.W[:, a] - probe.W[:, b]) @ (mu[ca] - mu[cb]))
            if gap < thr:
                rows.append(int(i))
                runner.append(int(cb))
    order = np.argsort(rows, kind="stable")
    return np.array(rows, dtype=np.int64)[order], np.array(runner, dtype=np.int64)[order]


def boundary_poison(instance, margin=0.20, seed=0):
    """Flip rows near the probe's decision boundary to the probe's runner-up class."""
    ctx = instance.context
    _need_classes(ctx)
    rows, runner = boundary_margin_rows(ctx.values, ctx.labels, margin, seed, ctx.name)
    return _relabel(instance, rows, runner, "boundary_poison", flagged=rows.tolist())


# --------------------------------------------------------------------------
# feature rewrites

def _joint(instance):
    return np.vstack([instance.context.values, instance.query.values]), instance.context.n


def rank_within(col):
    """0-based rank of each value; equal values are ranked by row index."""
    order = np.argsort(col, kind="stable")
    out = np.empty(col.size)
    out[order] = np.arange(col.size)
    return out


def warp_column(col, kind, tau=1.0, standardize=True):
    col = np.asarray(col, dtype=np.float64)
    if kind == "rank":
        return rank_within(col)
    z = col
    if standardize:
        mean, scale = standardizer(col[:, None])
        z = (col - mean[0]) / scale[0]
    if kind == "cube":
        return np.cbrt(z)
    if kind == "softexp":
        if tau <= 0:
            raise AttackError("softexp needs tau > 0")
        return np.expm1(tau * z) / tau
    raise AttackError(f"unknown warp {kind!r}")


def mono_warp(instance, kind="cube", tau=1.0, standardize=True):
    """Monotone per-column warp of numeric columns, over context and query jointly.

    ``cube``: signed cube root; ``softexp``: ``(exp(tau z) - 1) / tau``; both on
    jointly standardised columns. ``rank``: joint within-column rank with ties
    broken by row index (context rows first).
    """
    M, n = _joint(instance)
    out = M.copy()
    for j, k in enumerate(instance.context.column_kinds):
        if k == NUMERIC:
            out[:, j] = warp_column(M[:, j], kind, tau, standardize)
    return _rewrite(instance, out[:n], out[n:], f"mono_{kind}")


def svd_hide(instance, top_frac=0.25, damp=10.0):
    """Divide the top ``ceil(top_frac * d)`` singular values of the stacked
    context+query matrix by ``damp`` and multiply the rest by ``damp``."""
    M, n = _joint(instance)
    d = M.shape[1]
    if d < 2:
        raise AttackError("svd_hide needs d >= 2")
    k = _ceil_frac(top_frac, d)
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    w = s.copy()
    w[:k] /= damp
    w[k:] *= damp
    R = (U * w) @ Vt
    return _rewrite(instance, R[:n], R[n:], "svd_hide", kinds=(NUMERIC,) * d, k=k)


# --------------------------------------------------------------------------
# null-space PGD

def null_space(W, cutoff_rel=1e-6):
    """Orthonormal basis (d x r) of directions v with W^T v ~ 0.

    Singular values of ``W^T`` below ``cutoff_rel * sigma_max`` count as zero;
    the full SVD supplies the d - rank directions a thin SVD would omit.
    """
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    _, s, Vt = np.linalg.svd(W.T, full_matrices=True)
    rank = int(np.sum(s > cutoff_rel * s.max())) if s.size and s.max() > 0 else 0
    return Vt[rank:].T


def soft_knn_ce(delta, X, y_onehot, Zq, target, T):
    """Cross-entropy of a soft-kNN victim against fixed targets, and its gradient.

    The victim attends from query rows ``Zq`` to context rows ``X + delta``
    with weights ``softmax(-||z - x||^2 / T)``.
    """
    Xp = X + delta
    S = -_kernels.pairwise_sqdist(Zq, Xp) / T
    A = softmax(S, axis=1)
    P = np.maximum(A @ y_onehot, 1e-12)
    q = Zq.shape[0]
    loss = float(-np.sum(target * np.log(P)) / q)
    ratio = (target / P) @ y_onehot.T
    G = -A * (ratio - 1.0) / q
    grad = (2.0 / T) * (G.T @ Zq - G.sum(axis=0)[:, None] * Xp)
    return loss, grad


def nullspace_pgd(instance, ridge=None, eta=0.01, steps=200, budget=1.0, cutoff_rel=1e-6, seed=0,
                  min_directions=5, lam=1.0, temperature=None):
    """Normalised-gradient ascent on a soft-kNN victim inside the ridge null space.

    The perturbation ``delta`` (n x d, feature-std units of ``ridge``) starts
    at a random point on the budget sphere; after each step it is projected
    onto the null space of ``ridge.W`` and clipped to the Frobenius ball of
    radius ``budget``. The victim loss is the cross-entropy of its query
    predictions against the ridge softmax, which stays fixed. Fewer than
    ``min_directions`` null directions yields an excluded result.
    """
    ctx, qry = instance.context, instance.query
    _need_classes(ctx)
    C = ctx.n_classes
    if ridge is None:
        ridge = ridge_fit(ctx.values, ctx.labels, lam, C)
    N = null_space(ridge.W, cutoff_rel)
    if N.shape[1] < min_directions:
        out = PoisonedInstance(ctx, qry, "nullspace_pgd",
                               excluded=f"{N.shape[1]} null directions (< {min_directions})")
        out.info["n_null"] = int(N.shape[1])
        return out
    P = N @ N.T
    X = (ctx.values - ridge.mean) / ridge.scale
    Zq = (qry.values - ridge.mean) / ridge.scale
    Y = np.eye(C)[ctx.labels]
    target = ridge.predict_proba(qry.values)
    T = temperature or float(np.median(_kernels.pairwise_sqdist(Zq, X)))
    T = T if T > 0 else 1.0
    rng = _rng(instance, seed, "nullspace_pgd")
    delta = rng.normal(size=X.shape) @ P
    delta *= budget / np.linalg.norm(delta)
    history = []
    for _ in range(steps):
        loss, g = soft_knn_ce(delta, X, Y, Zq, target, T)
        history.append(loss)
        g = g @ P
        gn = np.linalg.norm(g)
        if gn > 0:
            delta = delta + eta * g / gn
        delta = delta @ P
        norm = np.linalg.norm(delta)
        if norm > budget:
            delta *= budget / norm
    history.append(soft_knn_ce(delta, X, Y, Zq, target, T)[0])
    new_values = ctx.values + delta * ridge.scale
    out = _rewrite(instance, new_values, qry.values.copy(), "nullspace_pgd")
    out.clean_query_values = None
    clean_logits = ridge.decision_function(ctx.values)
    out.info.update(n_null=int(N.shape[1]), norm=float(np.linalg.norm(delta)), loss_history=history,
                    temperature=T, delta=delta,
                    max_logit_change=float(np.abs(ridge.decision_function(new_values) - clean_logits).max()))
    return out


# --------------------------------------------------------------------------
# dispatch and grid

def apply_attack(spec, instance, seed=0):
    p = spec.params
    k = spec.kind
    if k == "none":
        return PoisonedInstance(instance.context, instance.query, "none")
    if k == "noise_pad":
        return noise_pad(instance, p["sigma_mult"], p["pad_frac"], seed, p["label_mode"])
    if k == "hub_poison":
        return hub_poison(instance, p["hub_frac"], int(p["k"]), seed)
    if k == "centroid_inj":
        return centroid_inj(instance, p["per_class"], seed)
    if k == "boundary_poison":
        return boundary_poison(instance, p["margin"], seed)
    if k in ("mono_cube", "mono_softexp", "mono_rank"):
        return mono_warp(instance, k[5:], p.get("tau", 1.0))
    if k == "svd_hide":
        return svd_hide(instance, p["top_frac"], p["damp"])
    return nullspace_pgd(instance, None, p["eta"], int(p["steps"]), p["budget"], p["cutoff_rel"], seed,
                         int(p["min_directions"]), p["lam"])


def _accuracy(fit_predict, ctx, qry):
    P = fit_predict(ctx.values, ctx.labels, qry.values, max(ctx.n_classes, qry.n_classes))
    return float(np.mean(np.argmax(P, axis=1) == qry.labels))


def attack_cell(table, seed, attack_specs, readouts, context_frac=0.8, context_size=None):
    """All (attack, readout) measurements of one (table, seed) cell.

    The split is drawn once and shared by every attack and readout.
    Returns ``(cells, failures)``.
    """
    split = stratified_split(table, seed, context_frac, context_size)
    inst = Instance.from_split(table, split)
    cells, failures = [], []
    clean = {}
    for name in readouts:
        try:
            clean[name] = _accuracy(get_readout(name), inst.context, inst.query)
        except Exception as exc:
            failures.append((table.name, seed, f"clean/{name}", f"{type(exc).__name__}: {exc}"))
    for spec in attack_specs:
        try:
            poisoned = apply_attack(spec, inst, seed)
        except Exception as exc:
            failures.append((table.name, seed, spec.kind, f"{type(exc).__name__}: {exc}"))
            continue
        for name in readouts:
            cond = f"{spec.kind}/{name}"
            if name not in clean:
                continue
            if poisoned.excluded:
                cells.append(ReportCell(table.name, seed, cond, "excluded", 1.0))
                continue
            try:
                acc = _accuracy(get_readout(name), poisoned.context, poisoned.query)
            except Exception as exc:
                failures.append((table.name, seed, cond, f"{type(exc).__name__}: {exc}"))
                continue
            cells.append(ReportCell(table.name, seed, cond, "clean_acc", clean[name]))
            cells.append(ReportCell(table.name, seed, cond, "poisoned_acc", acc))
            cells.append(ReportCell(table.name, seed, cond, "delta_pp", (acc - clean[name]) * 100))
    return cells, failures


def run_attack_grid(readouts, tables, attack_specs, seeds, context_frac=0.8, context_size=None):
    """Clean / poisoned accuracy and signed delta (pp) for every grid cell.

    Failures are collected as ``(dataset, seed, condition, message)`` and the
    grid carries on.
    """
    cells, failures = [], []
    for table in tables:
        if not table.is_classification:
            failures.append((table.name, -1, "grid", "attack grid needs a classification table"))
            continue
        for seed in seeds:
            try:
                c, f = attack_cell(table, seed, attack_specs, readouts, context_frac, context_size)
            except Exception as exc:
                failures.append((table.name, seed, "split", f"{type(exc).__name__}: {exc}"))
                continue
            cells.extend(c)
            failures.extend(f)
    return cells, failures
