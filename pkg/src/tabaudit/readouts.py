"""Readout rules that turn representations (or attention) into class probabilities.

Every classifier returns a ``(q, C)`` probability matrix. The registry at the
bottom wraps each rule as ``fit_predict(ctx_X, ctx_y, qry_X, n_classes)`` on
raw tables, standardising with context statistics, so the invariance harness
and the attack grid can treat them uniformly.
"""
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_softmax, softmax

from . import _kernels
from .rng import seed_rng
from .stats import accuracy as _accuracy
from .stats import cohen_kappa, correlation


class ReadoutError(ValueError):
    pass


ROW_SUM_TOL = 1e-9


def check_probs(P, n_classes=None):
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2:
        raise ReadoutError("probabilities must be a (q, C) matrix")
    if n_classes is not None and P.shape[1] != n_classes:
        raise ReadoutError(f"expected {n_classes} classes, got {P.shape[1]}")
    if np.any(P < -ROW_SUM_TOL) or np.any(np.abs(P.sum(axis=1) - 1) > ROW_SUM_TOL):
        raise ReadoutError("rows must be probability distributions")
    return P


def _labels(y, n_classes=None):
    y = np.asarray(y, dtype=np.int64)
    if y.ndim != 1 or y.size == 0:
        raise ReadoutError("labels must be a non-empty vector")
    if y.min() < 0:
        raise ReadoutError("labels must be non-negative class indices")
    k = int(y.max()) + 1 if n_classes is None else int(n_classes)
    if y.max() >= k:
        raise ReadoutError(f"label {int(y.max())} out of range for {k} classes")
    return y, k


def _onehot(y, k):
    out = np.zeros((y.size, k))
    out[np.arange(y.size), y] = 1.0
    return out


# --------------------------------------------------------------------------
# distances

def _sorted_sum(terms):
    # summing the sorted terms makes the result independent of column order
    return np.sort(terms, axis=-1).sum(axis=-1)


def _unit_rows(X, what):
    norms = np.sqrt(_sorted_sum(X * X))
    if np.any(norms == 0):
        raise ReadoutError(f"zero-norm {what} vector under cosine distance")
    return X / norms[:, None]


def distances(Q, X, metric="l2", VI=None):
    """(q, n) distance matrix. ``l2`` is Euclidean, ``cosine`` is 1 - cos."""
    Q = np.asarray(Q, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if metric == "l2":
        return np.sqrt(_kernels.pairwise_sqdist(Q, X))
    if metric == "cosine":
        return 1.0 - _unit_rows(Q, "query") @ _unit_rows(X, "context").T
    if metric == "mahalanobis":
        if VI is None:
            raise ReadoutError("mahalanobis distance needs an inverse covariance")
        L = np.linalg.cholesky(VI)
        return np.sqrt(_kernels.pairwise_sqdist(Q @ L, X @ L))
    raise ReadoutError(f"unknown metric {metric!r}")


def shrunk_inverse_covariance(X, shrinkage=1e-3):
    """Inverse of ``cov + gamma I`` with ``gamma = shrinkage * trace(cov) / D``."""
    X = np.asarray(X, dtype=np.float64)
    D = X.shape[1]
    cov = np.cov(X, rowvar=False).reshape(D, D) if X.shape[0] > 1 else np.zeros((D, D))
    gamma = shrinkage * np.trace(cov) / D
    A = cov + gamma * np.eye(D)
    try:
        np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise ReadoutError("context covariance is singular; increase shrinkage") from None
    return np.linalg.inv(A)


# --------------------------------------------------------------------------
# attention vote, prototype, kNN

def attention_vote(attn, context_labels, n_classes=None):
    """Head-averaged attention mass per context label.

    ``attn`` has shape (H, q, n), or (q, n) for a single head.
    """
    A = np.asarray(attn, dtype=np.float64)
    if A.ndim == 2:
        A = A[None]
    if A.ndim != 3:
        raise ReadoutError("attention must be (H, q, n)")
    y, k = _labels(context_labels, n_classes)
    if A.shape[2] != y.size:
        raise ReadoutError(f"attention covers {A.shape[2]} context rows but {y.size} labels given")
    if np.any(A < 0) or np.any(np.abs(A.sum(axis=2) - 1) > 1e-6):
        raise ReadoutError("each (head, query) attention row must be a distribution")
    return (A @ _onehot(y, k)).mean(axis=0)


def prototype_classify(context_reps, context_labels, query_reps, metric="l2", n_classes=None):
    """Softmax over negative distances to the unweighted per-class means."""
    X = np.asarray(context_reps, dtype=np.float64)
    Q = np.asarray(query_reps, dtype=np.float64)
    y, k = _labels(context_labels, n_classes)
    counts = np.bincount(y, minlength=k)
    if np.any(counts == 0):
        raise ReadoutError(f"classes {np.flatnonzero(counts == 0).tolist()} have no context rows")
    mu = np.stack([X[y == c].mean(axis=0) for c in range(k)])
    if metric == "l2":
        diff = Q[:, None, :] - mu[None, :, :]
        d = np.sqrt(_sorted_sum(diff * diff))
    elif metric == "cosine":
        Qn, Mn = _unit_rows(Q, "query"), _unit_rows(mu, "prototype")
        d = 1.0 - _sorted_sum(Qn[:, None, :] * Mn[None, :, :])
    else:
        raise ReadoutError(f"unknown prototype metric {metric!r}")
    return softmax(-d, axis=1)


def knn_classify(context_reps, context_labels, query_reps, k=5, metric="l2", n_classes=None,
                 shrinkage=1e-3):
    """Neighbour-label frequencies among the k nearest context rows.

    Equal distances are broken towards the lower context index.
    """
    X = np.asarray(context_reps, dtype=np.float64)
    y, C = _labels(context_labels, n_classes)
    if not 1 <= k <= X.shape[0]:
        raise ReadoutError(f"k={k} must lie in [1, {X.shape[0]}]")
    VI = shrunk_inverse_covariance(X, shrinkage) if metric == "mahalanobis" else None
    D = distances(query_reps, X, metric, VI)
    nn = np.argsort(D, axis=1, kind="stable")[:, :k]
    out = np.zeros((D.shape[0], C))
    for j in range(k):
        out[np.arange(D.shape[0]), y[nn[:, j]]] += 1.0
    return out / k


def _kernel_vote(D, y, C, T):
    if T == 0:
        P = np.zeros((D.shape[0], C))
        P[np.arange(D.shape[0]), y[np.argmin(D, axis=1)]] = 1.0
        return P
    if math.isinf(T):
        W = np.ones_like(D)
    else:
        W = np.exp(-(D - D.min(axis=1, keepdims=True)) / T)
    W /= W.sum(axis=1, keepdims=True)
    return W @ _onehot(y, C)


@dataclass(frozen=True)
class SoftKNNResult:
    probs: np.ndarray
    temperature: float
    degenerate: bool
    grid_accuracy: tuple


DEFAULT_TEMPERATURES = (0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0)


def soft_knn(context_reps, context_labels, query_reps, metric="l2",
             temperature_grid=DEFAULT_TEMPERATURES, seed=0, n_classes=None, fit_frac=0.75):
    """Weights ``exp(-d / T)`` over all context rows, T chosen on a held-out fold.

    The context is split ``fit_frac`` / rest with a seeded permutation; each
    grid temperature is scored by held-out accuracy and the first best wins.
    ``T = 0`` means the 1-NN limit and ``T = inf`` flat weights.
    """
    grid = tuple(float(t) for t in temperature_grid)
    if not grid or any(t < 0 or math.isnan(t) for t in grid):
        raise ReadoutError("temperature grid must be non-empty and non-negative")
    X = np.asarray(context_reps, dtype=np.float64)
    y, C = _labels(context_labels, n_classes)
    n = X.shape[0]
    D_full = distances(query_reps, X, metric)
    degenerate = bool(np.all(distances(X, X, metric) == 0))
    if degenerate:
        warnings.warn("all context distances are zero; soft-kNN falls back to flat weights",
                      RuntimeWarning, stacklevel=2)
        return SoftKNNResult(_kernel_vote(D_full, y, C, math.inf), math.inf, True, ())
    accs = []
    if n >= 2 and len(grid) > 1:
        perm = seed_rng(seed).permutation(n)
        n_fit = min(max(int(round(fit_frac * n)), 1), n - 1)
        fit, hold = perm[:n_fit], perm[n_fit:]
        D_hold = distances(X[hold], X[fit], metric)
        for T in grid:
            accs.append(_accuracy(_kernel_vote(D_hold, y[fit], C, T), y[hold]))
        T_best = grid[int(np.argmax(accs))]
    else:
        T_best = grid[0]
    return SoftKNNResult(_kernel_vote(D_full, y, C, T_best), T_best, False, tuple(accs))


def majority_baseline(context_labels, n_queries=1, n_classes=None):
    """Constant one-hot rows on the most frequent class (ties to the lowest index)."""
    y, k = _labels(context_labels, n_classes)
    top = int(np.argmax(np.bincount(y, minlength=k)))
    out = np.zeros((n_queries, k))
    out[:, top] = 1.0
    return out


# --------------------------------------------------------------------------
# linear probe

@dataclass
class ProbeResult:
    accuracy: float
    W: np.ndarray
    b: np.ndarray
    classes: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    loss_history: list = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False
    grad_norm: float = math.nan

    def decision_function(self, X):
        Z = (np.asarray(X, dtype=np.float64) - self.mean) / self.scale
        return Z @ self.W + self.b

    def predict_proba(self, X):
        return softmax(self.decision_function(X), axis=1)

    def predict(self, X):
        return self.classes[np.argmax(self.decision_function(X), axis=1)]


def standardizer(X):
    X = np.asarray(X, dtype=np.float64)
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return mean, scale


def probe_objective(theta, Z, Y, C_reg):
    """Summed multinomial cross-entropy + ||W||^2 / (2C); intercept unpenalised."""
    d, k = Z.shape[1], Y.shape[1]
    W = theta[:d * k].reshape(d, k)
    b = theta[d * k:]
    logits = Z @ W + b
    logp = log_softmax(logits, axis=1)
    loss = -np.sum(Y * logp) + np.sum(W * W) / (2 * C_reg)
    G = np.exp(logp) - Y
    gW = Z.T @ G + W / C_reg
    gb = G.sum(axis=0)
    return loss, np.concatenate([gW.ravel(), gb])


def _internal_split(y, seed, frac=0.8):
    rng = seed_rng(seed)
    fit, hold = [], []
    for c in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == c))
        cut = min(max(int(round(frac * idx.size)), 1), idx.size) if idx.size > 1 else idx.size
        fit.extend(idx[:cut].tolist())
        hold.extend(idx[cut:].tolist())
    return np.array(sorted(fit)), np.array(sorted(hold), dtype=np.int64)


def linear_probe(train_reps, train_labels, eval_reps=None, eval_labels=None, regularization=1.0,
                 seed=0, max_iter=2000, tol=1e-6):
    """Multinomial logistic regression with an L2 penalty, fit by L-BFGS.

    Features are standardised on the train fold. Without an explicit eval
    set, the train rows are split 80/20 per class (seeded).
    """
    X = np.asarray(train_reps, dtype=np.float64)
    y = np.asarray(train_labels, dtype=np.int64)
    if eval_reps is None:
        fit, hold = _internal_split(y, seed)
        Xe, ye = X[hold], y[hold]
        X, y = X[fit], y[fit]
    else:
        Xe = np.asarray(eval_reps, dtype=np.float64)
        ye = np.asarray(eval_labels, dtype=np.int64)
    classes = np.unique(y)
    if classes.size < 2:
        raise ReadoutError("linear probe needs at least two classes in the train fold")
    if regularization <= 0:
        raise ReadoutError("regularization C must be positive")
    mean, scale = standardizer(X)
    Z = (X - mean) / scale
    Y = (y[:, None] == classes[None, :]).astype(np.float64)
    d, k = Z.shape[1], classes.size
    history = []

    def record(intermediate_result):
        history.append(float(intermediate_result.fun))

    theta0 = np.zeros(d * k + k)
    history.append(float(probe_objective(theta0, Z, Y, regularization)[0]))
    res = minimize(probe_objective, theta0, args=(Z, Y, regularization), jac=True,
                   method="L-BFGS-B", callback=record,
                   options={"maxiter": max_iter, "gtol": tol, "ftol": 1e-16, "maxcor": 20})
    _, grad = probe_objective(res.x, Z, Y, regularization)
    gnorm = float(np.linalg.norm(grad))
    out = ProbeResult(math.nan, res.x[:d * k].reshape(d, k), res.x[d * k:], classes, mean, scale,
                      history, int(res.nit), gnorm <= tol or bool(res.success), gnorm)
    if ye.size:
        out.accuracy = float(np.mean(out.predict(Xe) == ye))
    return out


# --------------------------------------------------------------------------
# ridge

@dataclass
class RidgeModel:
    """Ridge fit on standardised features; ``W`` lives in standardised units."""
    W: np.ndarray
    intercept: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    lam: float
    n_classes: int = 0

    @property
    def coef_(self):
        return self.W / self.scale[:, None]

    def decision_function(self, X):
        Z = (np.asarray(X, dtype=np.float64) - self.mean) / self.scale
        return Z @ self.W + self.intercept

    def predict(self, X):
        out = self.decision_function(X)
        if self.n_classes:
            return np.argmax(out, axis=1)
        return out[:, 0]

    def predict_proba(self, X):
        if not self.n_classes:
            raise ReadoutError("regression ridge has no class probabilities")
        return softmax(self.decision_function(X), axis=1)


def ridge_fit(context_X, context_y, lam=1.0, n_classes=None):
    """Closed-form ridge, ``W = (Z'Z + lam I)^-1 Z'(Y - mean Y)`` on standardised Z.

    Integer labels with ``n_classes`` set are one-hot encoded; otherwise
    ``context_y`` is a real target vector or matrix.
    """
    if lam <= 0:
        raise ReadoutError("ridge lambda must be positive")
    X = np.asarray(context_X, dtype=np.float64)
    if n_classes:
        y, k = _labels(context_y, n_classes)
        Y = _onehot(y, k)
    else:
        Y = np.asarray(context_y, dtype=np.float64)
        Y = Y[:, None] if Y.ndim == 1 else Y
    mean, scale = standardizer(X)
    Z = (X - mean) / scale
    ybar = Y.mean(axis=0)
    A = Z.T @ Z + lam * np.eye(Z.shape[1])
    W = np.linalg.solve(A, Z.T @ (Y - ybar))
    return RidgeModel(W, ybar, mean, scale, float(lam), int(n_classes or 0))


def ridge_predict(context_X, context_y, query_X, lam=1.0, n_classes=None):
    """Fit ridge on the context and predict the queries; returns (predictions, model)."""
    model = ridge_fit(context_X, context_y, lam, n_classes)
    return model.predict(query_X), model


# --------------------------------------------------------------------------
# one-vs-all

class OvAError(ReadoutError):
    pass


@dataclass(frozen=True)
class OvAResult:
    probs: np.ndarray
    scores: np.ndarray
    predictions: np.ndarray


def ova_wrap(base, context_X, context_y, query_X, n_classes):
    """Run ``base`` once per class on a (class c vs rest) relabelling.

    ``base(ctx_X, binary_y, qry_X, 2)`` returns (q, 2) probabilities; column 1
    is the positive score. Scores are normalised per query (uniform when all
    are zero). The predicted class is the argmax of the raw scores, with ties
    going to the class whose first context row comes earliest, so the
    prediction does not depend on how classes are numbered.
    """
    y, C = _labels(context_y, n_classes)
    if C < 2:
        raise OvAError("one-vs-all needs at least two classes")
    q = np.asarray(query_X).shape[0]
    scores = np.zeros((q, C))
    for c in range(C):
        try:
            P = np.asarray(base(context_X, (y == c).astype(np.int64), query_X, 2), dtype=np.float64)
        except Exception as exc:
            raise OvAError(f"base classifier failed on class {c} vs rest: {exc}") from exc
        scores[:, c] = P[:, 1]
    first_seen = np.array([np.flatnonzero(y == c)[0] if np.any(y == c) else y.size + c
                           for c in range(C)])
    preds = np.empty(q, dtype=np.int64)
    for i in range(q):
        top = np.flatnonzero(scores[i] == scores[i].max())
        preds[i] = top[np.argmin(first_seen[top])]
    tot = scores.sum(axis=1, keepdims=True)
    probs = np.where(tot > 0, scores / np.where(tot > 0, tot, 1.0), 1.0 / C)
    return OvAResult(probs, scores, preds)


# --------------------------------------------------------------------------
# surrogate verdict

@dataclass(frozen=True)
class SurrogateVerdict:
    pearson_r: float
    acc_gap_pp: float
    kappa: float
    pass_r: bool
    pass_gap: bool
    pass_kappa: bool
    joint: bool
    r_missing: bool = False
    intervention_gap_pp: float | None = None


_SLACK = 1e-12


def surrogate_verdict(model_probs, rule_probs, true_labels, r_min=0.85, gap_max_pp=3.0,
                      kappa_min=0.8, intervened_probs=None):
    """Pearson r on flattened probabilities, accuracy gap (pp), argmax kappa.

    ``intervened_probs`` is an optional hook: the rule's probabilities after
    an external intervention, reported as an extra accuracy gap only.
    """
    A = np.asarray(model_probs, dtype=np.float64)
    B = np.asarray(rule_probs, dtype=np.float64)
    y = np.asarray(true_labels, dtype=np.int64)
    if A.shape != B.shape or A.shape[0] != y.size:
        raise ReadoutError("model and rule probabilities must share a (q, C) shape")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        r = correlation(A.ravel(), B.ravel())
    gap = abs(_accuracy(A, y) - _accuracy(B, y)) * 100
    kappa = cohen_kappa(A.argmax(axis=1), B.argmax(axis=1))
    missing = math.isnan(r)
    pr = (not missing) and r >= r_min - _SLACK
    pg = gap <= gap_max_pp + _SLACK
    pk = kappa >= kappa_min - _SLACK
    extra = None
    if intervened_probs is not None:
        extra = abs(_accuracy(A, y) - _accuracy(intervened_probs, y)) * 100
    return SurrogateVerdict(r, gap, kappa, pr, pg, pk, pr and pg and pk, missing, extra)


# --------------------------------------------------------------------------
# table-level registry: fit_predict(ctx_X, ctx_y, qry_X, n_classes) -> probs

def _standardize_pair(ctx_X, qry_X):
    mean, scale = standardizer(ctx_X)
    return (np.asarray(ctx_X, dtype=np.float64) - mean) / scale, \
        (np.asarray(qry_X, dtype=np.float64) - mean) / scale


def _knn(k, metric="l2"):
    def fit_predict(ctx_X, ctx_y, qry_X, n_classes):
        Xc, Xq = _standardize_pair(ctx_X, qry_X)
        return knn_classify(Xc, ctx_y, Xq, k=min(k, Xc.shape[0]), metric=metric, n_classes=n_classes)
    return fit_predict


def _knn_rank(k):
    # kNN on within-context rank features: unchanged by any strictly monotone column warp
    def fit_predict(ctx_X, ctx_y, qry_X, n_classes):
        ctx_X = np.asarray(ctx_X, dtype=np.float64)
        qry_X = np.asarray(qry_X, dtype=np.float64)
        srt = np.sort(ctx_X, axis=0)
        rc = np.column_stack([np.searchsorted(srt[:, j], ctx_X[:, j], side="left")
                              for j in range(ctx_X.shape[1])]).astype(np.float64)
        rq = np.column_stack([np.searchsorted(srt[:, j], qry_X[:, j], side="left")
                              for j in range(ctx_X.shape[1])]).astype(np.float64)
        return knn_classify(rc, ctx_y, rq, k=min(k, rc.shape[0]), n_classes=n_classes)
    return fit_predict


def _prototype(metric="l2"):
    def fit_predict(ctx_X, ctx_y, qry_X, n_classes):
        Xc, Xq = _standardize_pair(ctx_X, qry_X)
        return prototype_classify(Xc, ctx_y, Xq, metric=metric, n_classes=n_classes)
    return fit_predict


def _vote(ctx_X, ctx_y, qry_X, n_classes):
    # single-head scaled dot-product attention from queries onto context rows
    Xc, Xq = _standardize_pair(ctx_X, qry_X)
    A = softmax(Xq @ Xc.T / math.sqrt(Xc.shape[1]), axis=1)
    return attention_vote(A[None], ctx_y, n_classes)


def _soft_knn(ctx_X, ctx_y, qry_X, n_classes):
    Xc, Xq = _standardize_pair(ctx_X, qry_X)
    return soft_knn(Xc, ctx_y, Xq, n_classes=n_classes).probs


def _ridge(ctx_X, ctx_y, qry_X, n_classes):
    model = ridge_fit(ctx_X, ctx_y, 1.0, n_classes)
    return model.predict_proba(qry_X)


def _probe(ctx_X, ctx_y, qry_X, n_classes):
    y = np.asarray(ctx_y, dtype=np.int64)
    res = linear_probe(ctx_X, y, ctx_X[:0], y[:0])
    out = np.zeros((np.asarray(qry_X).shape[0], n_classes))
    out[:, res.classes] = res.predict_proba(qry_X)
    return out


def _majority(ctx_X, ctx_y, qry_X, n_classes):
    return majority_baseline(ctx_y, np.asarray(qry_X).shape[0], n_classes)


def _m0(ctx_X, ctx_y, qry_X, n_classes):
    from .toy import m0_fit_predict
    return m0_fit_predict(ctx_X, ctx_y, qry_X, n_classes)


READOUTS = {
    "knn1": _knn(1), "knn3": _knn(3), "knn5": _knn(5),
    "knn5_cosine": _knn(5, "cosine"), "knn5_mahalanobis": _knn(5, "mahalanobis"),
    "knn5_rank": _knn_rank(5),
    "prototype": _prototype(), "prototype_cosine": _prototype("cosine"),
    "vote": _vote, "soft_knn": _soft_knn, "ridge": _ridge, "probe": _probe,
    "majority": _majority, "m0": _m0,
}


def get_readout(name):
    """Look up a table classifier; an ``ova:`` prefix wraps it one-vs-all."""
    if name.startswith("ova:"):
        base = get_readout(name[4:])

        def wrapped(ctx_X, ctx_y, qry_X, n_classes):
            return ova_wrap(base, ctx_X, ctx_y, qry_X, n_classes).probs
        return wrapped
    try:
        return READOUTS[name]
    except KeyError:
        raise ReadoutError(f"unknown readout {name!r}; known: {sorted(READOUTS)}") from None


def predict_labels(name, ctx_X, ctx_y, qry_X, n_classes):
    """Hard predictions; for ``ova:`` readouts this uses the relabelling-safe tie rule."""
    if name.startswith("ova:"):
        return ova_wrap(get_readout(name[4:]), ctx_X, ctx_y, qry_X, n_classes).predictions
    return np.argmax(get_readout(name)(ctx_X, ctx_y, qry_X, n_classes), axis=1)
