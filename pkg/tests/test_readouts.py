import itertools
import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import assume, given, strategies as st
from scipy.special import softmax

from tabaudit import readouts as R
from tabaudit.data import generate_synthetic, stratified_split
from tabaudit.rng import seed_rng


def blobs(n=40, d=2, k=2, seed=0, sep=3.0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % k
    centers = rng.normal(size=(k, d)) * sep
    return centers[y] + rng.normal(size=(n, d)), y


def brute_knn(X, y, Q, k, C):
    out = np.zeros((len(Q), C))
    for i, q in enumerate(Q):
        d = [(math.dist(q, x), j) for j, x in enumerate(X)]
        for _, j in sorted(d)[:k]:
            out[i, y[j]] += 1 / k
    return out


def brute_prototype(X, y, Q, C):
    out = []
    for q in Q:
        d = []
        for c in range(C):
            pts = [x for x, lab in zip(X, y) if lab == c]
            mu = [sum(col) / len(pts) for col in zip(*pts)]
            d.append(math.dist(q, mu))
        e = [math.exp(-v) for v in d]
        out.append([v / sum(e) for v in e])
    return np.array(out)


# attention vote

def test_vote_examples():
    assert np.allclose(R.attention_vote(np.full((4, 3), 1 / 3), [0, 0, 1]), [[2 / 3, 1 / 3]] * 4)
    assert R.attention_vote([[0, 0, 1.0]], [0, 0, 1]).tolist() == [[0, 1]]
    A = np.array([[[1.0, 0]], [[0, 1.0]]])
    assert R.attention_vote(A, [0, 1]).tolist() == [[0.5, 0.5]]
    with pytest.raises(R.ReadoutError):
        R.attention_vote([[0.5, 0.2]], [0, 1])


@given(st.lists(st.integers(0, 3), min_size=1, max_size=30))
def test_uniform_vote_is_class_frequency(y):
    n = len(y)
    P = R.attention_vote(np.full((2, n), 1 / n), y, 4)
    assert np.allclose(P[0], np.bincount(y, minlength=4) / n, atol=1e-15)


# prototype and kNN

def test_prototype_examples():
    X = np.array([[0.0, 0], [0, 0], [10, 0], [10, 0]])
    y = [0, 0, 1, 1]
    assert R.prototype_classify(X, y, [[1.0, 0]]).argmax() == 0
    assert R.prototype_classify(X, y, [[5.0, 3]]).tolist() == [[0.5, 0.5]]


def test_prototype_three_class_oracle():
    X = np.array([[0.0, 1], [1, 0], [4, 4], [5, 5], [-3, 2], [-4, 1]])
    y = [0, 0, 1, 1, 2, 2]
    Q = np.array([[0.5, 0.5], [3, 3], [-2, 0]])
    assert np.allclose(R.prototype_classify(X, y, Q), brute_prototype(X, y, Q, 3), atol=1e-12)


def test_knn_examples():
    X = np.array([[0.0], [1.0], [2.0], [10.0]])
    assert R.knn_classify(X, [0, 1, 0, 1], [[2.0]], k=1).tolist() == [[1, 0]]
    assert np.allclose(R.knn_classify(X, [0, 0, 1, 1], [[0.9]], k=3), [[2 / 3, 1 / 3]])
    with pytest.raises(R.ReadoutError):
        R.knn_classify(X, [0, 0, 1, 1], [[0.0]], k=5)


def test_knn_tie_goes_to_lower_index():
    X = np.array([[1.0], [-1.0]])
    assert R.knn_classify(X, [1, 0], [[0.0]], k=1).tolist() == [[0, 1]]


def test_knn_blob_oracle():
    X, y = blobs(40)
    Q, _ = blobs(15, seed=1)
    assert np.allclose(R.knn_classify(X, y, Q, k=5), brute_knn(X, y, Q, 5, 2), atol=1e-15)


@pytest.mark.parametrize("metric", ["cosine", "mahalanobis"])
def test_knn_other_metrics_match_bruteforce(metric):
    X, y = blobs(30, d=3, k=3, seed=4)
    Q, _ = blobs(8, d=3, k=3, seed=5)
    if metric == "cosine":
        D = np.array([[1 - q @ x / np.linalg.norm(q) / np.linalg.norm(x) for x in X] for q in Q])
    else:
        VI = np.linalg.inv(np.cov(X, rowvar=False) + 1e-3 * np.trace(np.cov(X, rowvar=False)) / 3 * np.eye(3))
        D = np.array([[math.sqrt((q - x) @ VI @ (q - x)) for x in X] for q in Q])
    expect = np.zeros((len(Q), 3))
    for i in range(len(Q)):
        for j in np.argsort(D[i], kind="stable")[:5]:
            expect[i, y[j]] += 0.2
    assert np.allclose(R.knn_classify(X, y, Q, 5, metric), expect)


@given(st.integers(0, 10_000))
def test_knn_row_order_invariant(seed):
    X, y = blobs(25, d=3, k=3, seed=seed)
    Q, _ = blobs(6, d=3, k=3, seed=seed + 1)
    perm = np.random.default_rng(seed).permutation(25)
    assert np.array_equal(R.knn_classify(X, y, Q, 5), R.knn_classify(X[perm], y[perm], Q, 5))


@given(st.integers(0, 10_000), st.floats(-50, 50), st.floats(-50, 50))
def test_prototype_translation_invariant(seed, a, b):
    X, y = blobs(20, d=2, k=3, seed=seed)
    Q, _ = blobs(5, d=2, k=3, seed=seed + 7)
    t = np.array([a, b])
    P0, P1 = R.prototype_classify(X, y, Q), R.prototype_classify(X + t, y, Q + t)
    assert np.allclose(P0, P1, atol=1e-9)
    margin = np.sort(P0, axis=1)
    assume(np.all(margin[:, -1] - margin[:, -2] > 1e-9))
    assert np.array_equal(P0.argmax(1), P1.argmax(1))


@pytest.mark.parametrize("name", sorted(R.READOUTS))
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_every_readout_returns_distributions(name, seed):
    X, y = blobs(36, d=3, k=3, seed=seed)
    Q, _ = blobs(9, d=3, k=3, seed=seed + 50)
    P = R.get_readout(name)(X, y, Q, 3)
    assert P.shape == (9, 3)
    R.check_probs(P, 3)
    Po = R.get_readout("ova:" + name)(X, y, Q, 3)
    R.check_probs(Po, 3)


def test_unknown_readout():
    with pytest.raises(R.ReadoutError):
        R.get_readout("nope")


# soft kNN

def test_soft_knn_limits():
    X, y = blobs(30, seed=3)
    Q, _ = blobs(7, seed=4)
    flat = R.soft_knn(X, y, Q, temperature_grid=[math.inf])
    assert np.allclose(flat.probs, np.bincount(y) / 30)
    sharp = R.soft_knn(X, y, Q, temperature_grid=[0.0])
    assert np.array_equal(sharp.probs, R.knn_classify(X, y, Q, k=1))


def test_soft_knn_selection_oracle():
    X, y = blobs(60, seed=8, sep=1.0)
    Q, _ = blobs(10, seed=9)
    grid = (0.1, 1.0, 10.0)
    res = R.soft_knn(X, y, Q, temperature_grid=grid, seed=3)
    perm = seed_rng(3).permutation(60)
    fit, hold = perm[:45], perm[45:]
    accs = []
    for T in grid:
        D = np.sqrt(((X[hold][:, None] - X[fit][None]) ** 2).sum(-1))
        W = np.exp(-D / T)
        P = W @ np.eye(2)[y[fit]]
        accs.append(np.mean(P.argmax(1) == y[hold]))
    assert res.grid_accuracy == pytest.approx(tuple(accs))
    assert res.temperature == grid[int(np.argmax(accs))]


def test_soft_knn_degenerate():
    with pytest.warns(RuntimeWarning):
        res = R.soft_knn(np.zeros((4, 2)), [0, 1, 1, 1], np.ones((2, 2)))
    assert res.degenerate and np.allclose(res.probs, [[0.25, 0.75]] * 2)


# majority

def test_majority():
    assert R.majority_baseline([0, 0, 1], 2).tolist() == [[1, 0], [1, 0]]
    assert R.majority_baseline([0, 1, 1, 0]).argmax() == 0


def test_majority_on_balance_like():
    t = generate_synthetic("balance_like")
    s = stratified_split(t, 0)
    ctx, qry = t.labels[list(s.context_idx)], t.labels[list(s.query_idx)]
    acc = np.mean(R.majority_baseline(ctx, len(qry), 3).argmax(1) == qry)
    assert abs(acc - 0.46) < 0.05


# linear probe

def gd_oracle(Z, y, C_reg, tol=1e-10, max_iter=500_000):
    """Plain gradient descent on the penalised multinomial loss, independently written."""
    n, d = Z.shape
    k = int(y.max()) + 1
    Y = np.eye(k)[y]
    A = np.hstack([Z, np.ones((n, 1))])
    L = np.linalg.norm(A, 2) ** 2 + 1 / C_reg
    theta = np.zeros((d + 1, k))

    def f_grad(th):
        logits = A @ th
        logits -= logits.max(axis=1, keepdims=True)
        logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        W = th[:d]
        f = -(Y * logp).sum() + (W * W).sum() / (2 * C_reg)
        g = A.T @ (np.exp(logp) - Y)
        g[:d] += W / C_reg
        return f, g

    for _ in range(max_iter):
        f, g = f_grad(theta)
        if np.linalg.norm(g) < tol:
            break
        theta = theta - g / L
    return f


def test_probe_matches_gd_oracle():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(20, 3))
    y = (X[:, 0] + 0.5 * rng.normal(size=20) > 0).astype(int)
    res = R.linear_probe(X, y, X, y, regularization=1.0)
    Z = (X - res.mean) / res.scale
    theta = np.concatenate([res.W.ravel(), res.b])
    probe_loss = R.probe_objective(theta, Z, np.eye(2)[y], 1.0)[0]
    assert abs(probe_loss - gd_oracle(Z, y, 1.0)) <= 1e-6


def test_probe_separable_and_chance():
    rng = np.random.default_rng(0)
    y = np.arange(60) % 2
    X = np.column_stack([np.where(y == 1, 2.0, -2.0) + rng.uniform(-1, 1, 60), rng.normal(size=60)])
    assert R.linear_probe(X, y, seed=0).accuracy == 1.0
    accs = []
    for s in range(8):
        rng = np.random.default_rng(s)
        Xr = rng.normal(size=(200, 4))
        yr = rng.permutation(np.arange(200) % 2)
        accs.append(R.linear_probe(Xr, yr, seed=s).accuracy)
    assert abs(np.mean(accs) - 0.5) < 0.15


def test_probe_loss_is_monotone():
    X, y = blobs(80, d=5, k=3, seed=2, sep=1.0)
    res = R.linear_probe(X, y)
    h = np.array(res.loss_history)
    assert len(h) > 2 and np.all(np.diff(h) <= 1e-9 * np.abs(h[:-1]))
    assert res.converged


def test_probe_errors():
    with pytest.raises(R.ReadoutError):
        R.linear_probe(np.zeros((4, 2)), [1, 1, 1, 1])
    with pytest.raises(R.ReadoutError):
        R.linear_probe(np.eye(4), [0, 1, 0, 1], regularization=0)


# ridge

def test_ridge_recovers_slope():
    x = np.linspace(-2, 3, 30)[:, None]
    model = R.ridge_fit(x, 2 * x[:, 0], lam=1e-8)
    assert abs(model.coef_[0, 0] - 2) < 1e-6


def test_ridge_shrinks_to_intercept():
    rng = np.random.default_rng(0)
    X, yv = rng.normal(size=(20, 3)), rng.normal(size=20)
    model = R.ridge_fit(X, yv, lam=1e12)
    assert np.abs(model.W).max() < 1e-9
    assert np.allclose(model.predict(X), yv.mean(), atol=1e-9)


def test_ridge_lu_oracle():
    rng = np.random.default_rng(6)
    X, Y = rng.normal(size=(5, 3)), rng.normal(size=(5, 2))
    model = R.ridge_fit(X, Y, lam=0.7)
    Z = (X - X.mean(0)) / X.std(0)
    lu = scipy.linalg.lu_factor(Z.T @ Z + 0.7 * np.eye(3))
    W = scipy.linalg.lu_solve(lu, Z.T @ (Y - Y.mean(0)))
    assert np.abs(model.W - W).max() <= 1e-10


def test_ridge_classifier():
    X, y = blobs(40, sep=5)
    preds, model = R.ridge_predict(X, y, X, n_classes=2)
    assert np.mean(preds == y) > 0.9
    with pytest.raises(R.ReadoutError):
        R.ridge_fit(X, y, lam=0)


# one-vs-all

def test_ova_binary_matches_prototype():
    X, y = blobs(30, seed=5)
    Q, _ = blobs(12, seed=6)
    base = R.get_readout("prototype")
    res = R.ova_wrap(base, X, y, Q, 2)
    assert np.array_equal(res.predictions, base(X, y, Q, 2).argmax(1))


def test_ova_three_class_manual_assembly():
    X, y = blobs(45, k=3, seed=2)
    Q, _ = blobs(10, k=3, seed=3)
    base = R.get_readout("prototype")
    runs = [base(X, (y == c).astype(int), Q, 2)[:, 1] for c in range(3)]
    S = np.column_stack(runs)
    res = R.ova_wrap(base, X, y, Q, 3)
    assert np.array_equal(res.scores, S)
    assert np.allclose(res.probs, S / S.sum(1, keepdims=True), atol=1e-15)


@given(st.integers(0, 10_000), st.sampled_from(["knn5", "prototype", "vote", "knn1"]))
def test_ova_relabel_invariance(seed, name):
    X, y = blobs(30, d=2, k=3, seed=seed, sep=0.7)
    Q, _ = blobs(10, d=2, k=3, seed=seed + 1)
    pi = np.random.default_rng(seed).permutation(3)
    base = R.get_readout(name)
    p0 = R.ova_wrap(base, X, y, Q, 3).predictions
    p1 = R.ova_wrap(base, X, pi[y], Q, 3).predictions
    inv = np.argsort(pi)
    assert np.array_equal(p0, inv[p1])


def test_ova_needs_two_classes():
    with pytest.raises(R.OvAError):
        R.ova_wrap(R.get_readout("knn1"), np.eye(2), [0, 0], np.eye(2), 1)


# surrogate verdict

def test_verdict_identity():
    P = softmax(np.random.default_rng(0).normal(size=(20, 3)), axis=1)
    y = P.argmax(1)
    v = R.surrogate_verdict(P, P, y)
    assert v.pearson_r == pytest.approx(1.0) and v.acc_gap_pp == 0 and v.kappa == 1 and v.joint


def test_verdict_constant_rule_has_zero_kappa():
    model = np.array([[0.9, 0.1], [0.2, 0.8]] * 5)
    rule = np.tile([0.6, 0.4], (10, 1))
    v = R.surrogate_verdict(model, rule, [0, 1] * 5)
    assert v.kappa == 0 and not v.joint


def test_verdict_hand_case():
    # 50 queries: rule flips one correct answer; probabilities shifted slightly
    y = np.array([0, 1] * 25)
    model = np.where(np.arange(50)[:, None] % 2 == 0, [[0.8, 0.2]], [[0.3, 0.7]])
    rule = model.copy()
    rule[0] = [0.4, 0.6]
    v = R.surrogate_verdict(model, rule, y)
    assert v.acc_gap_pp == pytest.approx(2.0)
    # kappa by hand: agree 49/50, both raters near-balanced
    a, b = model.argmax(1), rule.argmax(1)
    pe = (np.mean(a == 0) * np.mean(b == 0) + np.mean(a == 1) * np.mean(b == 1))
    assert v.kappa == pytest.approx((0.98 - pe) / (1 - pe), abs=1e-12)
    assert v.pearson_r == pytest.approx(np.corrcoef(model.ravel(), rule.ravel())[0, 1], abs=1e-12)
    assert v.pearson_r > 0.85 and v.kappa > 0.8 and v.joint
