"""Tables, CSV ingestion, encoding, splits and synthetic generators."""
import csv
import itertools
import logging
import math
import os
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .rng import cell_rng

log = logging.getLogger(__name__)

NUMERIC = "numeric"
CATEGORICAL = "categorical"

MISSING_TOKENS = frozenset({"", "?", "na", "n/a", "nan", "null", "none"})


class DataError(ValueError):
    """Base class for dataset problems."""


class MissingFileError(DataError, FileNotFoundError):
    pass


class MissingColumnError(DataError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class EmptyTableError(DataError):
    pass


class EncodingError(DataError):
    pass


class SplitError(DataError):
    pass


@dataclass
class Table:
    """An n x d feature matrix with per-column kinds and optional supervision.

    Missing cells are NaN. ``categories[j]`` lists the original category
    strings of categorical column ``j`` in code order (``None`` when the
    column was integer-coded in the source).
    """

    values: np.ndarray
    column_kinds: tuple
    labels: np.ndarray | None = None
    targets: np.ndarray | None = None
    name: str = "table"
    column_names: tuple | None = None
    categories: tuple | None = None
    class_names: tuple | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError("values must be a 2-d matrix")
        n, d = self.values.shape
        if n < 1 or d < 1:
            raise EmptyTableError(f"table {self.name!r} has shape {self.values.shape}")
        self.column_kinds = tuple(self.column_kinds)
        if len(self.column_kinds) != d:
            raise DataError("one column kind per column required")
        bad = set(self.column_kinds) - {NUMERIC, CATEGORICAL}
        if bad:
            raise DataError(f"unknown column kinds {sorted(bad)}")
        if self.labels is not None and self.targets is not None:
            raise DataError("a table carries labels or targets, not both")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise DataError("labels must have one entry per row")
            if self.labels.min() < 0:
                raise DataError("class indices must be non-negative")
        if self.targets is not None:
            self.targets = np.asarray(self.targets, dtype=np.float64)
            if self.targets.shape != (n,):
                raise DataError("targets must have one entry per row")
        if self.column_names is None:
            self.column_names = tuple(f"x{j}" for j in range(d))
        self.column_names = tuple(self.column_names)
        if self.categories is None:
            self.categories = (None,) * d
        self.categories = tuple(self.categories)

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def d(self):
        return self.values.shape[1]

    @property
    def n_classes(self):
        if self.labels is None:
            return 0
        if self.class_names is not None:
            return len(self.class_names)
        return int(self.labels.max()) + 1

    @property
    def is_classification(self):
        return self.labels is not None

    def take(self, idx):
        """Row subset (features and supervision) in the given order."""
        idx = np.asarray(idx, dtype=np.int64)
        return replace(
            self,
            values=self.values[idx],
            labels=None if self.labels is None else self.labels[idx],
            targets=None if self.targets is None else self.targets[idx],
        )

    def to_rows(self):
        """Serialisable form, used to check byte-level determinism."""
        sup = self.labels if self.labels is not None else self.targets
        body = np.column_stack([self.values, sup]) if sup is not None else self.values
        return "\n".join(",".join(repr(float(v)) for v in row) for row in body)


@dataclass(frozen=True)
class Split:
    context_idx: tuple
    query_idx: tuple
    seed: int
    stratified: bool

    def __post_init__(self):
        object.__setattr__(self, "context_idx", tuple(int(i) for i in self.context_idx))
        object.__setattr__(self, "query_idx", tuple(int(i) for i in self.query_idx))
        if set(self.context_idx) & set(self.query_idx):
            raise SplitError("context and query overlap")


# --------------------------------------------------------------------------
# CSV ingestion

def _parse_float(text):
    if text.strip().lower() in MISSING_TOKENS:
        return math.nan
    try:
        return float(text)
    except ValueError:
        return None


def load_csv(path, label_column, kind_overrides=None, task="auto", max_categories=10):
    """Read a comma-separated file with a header row into a :class:`Table`.

    A column whose non-missing cells all parse as reals is numeric; it is
    re-typed categorical when every value is an integer and there are at most
    ``max_categories`` distinct values. Any other column is a string column
    and is coded by first appearance (``encode_and_impute`` later recodes it
    in sorted order). ``task`` is ``"classification"``, ``"regression"`` or
    ``"auto"`` (regression when the label column is numeric with non-integer
    values or more than 20 distinct values).
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise EmptyTableError(f"{path}: no header")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    if label_column not in header:
        raise MissingColumnError(f"{path}: label column {label_column!r} not in header {header}")
    if not body:
        raise EmptyTableError(f"{path}: zero data rows")
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise DataError(f"{path}: row {i + 2} has {len(r)} fields, header has {len(header)}")

    overrides = dict(kind_overrides or {})
    li = header.index(label_column)
    raw_labels = [r[li].strip() for r in body]
    keep = [i for i, v in enumerate(raw_labels) if v.lower() not in MISSING_TOKENS]
    if len(keep) < len(body):
        log.warning("%s: dropping %d rows with a missing label", path, len(body) - len(keep))
        body = [body[i] for i in keep]
        raw_labels = [raw_labels[i] for i in keep]
        if not body:
            raise EmptyTableError(f"{path}: no rows with a label")

    names, kinds, cols, cats = [], [], [], []
    for j, h in enumerate(header):
        if j == li:
            continue
        cells = [r[j].strip() for r in body]
        parsed = [_parse_float(c) for c in cells]
        kind = overrides.get(h)
        if all(p is not None for p in parsed) or kind == NUMERIC:
            col = np.array([math.nan if p is None else p for p in parsed])
            finite = col[~np.isnan(col)]
            if kind is None:
                is_int = finite.size > 0 and np.all(finite == np.round(finite))
                kind = CATEGORICAL if is_int and np.unique(finite).size <= max_categories else NUMERIC
            cats.append(None)
        else:
            kind = CATEGORICAL
            order = {}
            for c in cells:
                if c.lower() not in MISSING_TOKENS and c not in order:
                    order[c] = len(order)
            col = np.array([order[c] if c.lower() not in MISSING_TOKENS else math.nan for c in cells])
            cats.append(tuple(order))
        names.append(h)
        kinds.append(kind)
        cols.append(col)
    if not cols:
        raise DataError(f"{path}: no feature columns besides the label")

    parsed_labels = [_parse_float(v) for v in raw_labels]
    numeric_label = all(p is not None for p in parsed_labels)
    if task == "auto":
        if numeric_label:
            arr = np.array(parsed_labels)
            integral = np.all(arr == np.round(arr))
            task = "classification" if integral and np.unique(arr).size <= 20 else "regression"
        else:
            task = "classification"
    values = np.column_stack(cols)
    name = path.stem
    if task == "regression":
        if not numeric_label:
            raise DataError(f"{path}: regression target {label_column!r} is not numeric")
        return Table(values, kinds, targets=np.array(parsed_labels), name=name,
                     column_names=names, categories=cats)
    if numeric_label:
        distinct = sorted(set(parsed_labels))
        lookup = {v: i for i, v in enumerate(distinct)}
        labels = np.array([lookup[v] for v in parsed_labels])
        class_names = tuple(raw_labels[parsed_labels.index(v)] for v in distinct)
    else:
        distinct = sorted(set(raw_labels))
        lookup = {v: i for i, v in enumerate(distinct)}
        labels = np.array([lookup[v] for v in raw_labels])
        class_names = tuple(distinct)
    return Table(values, kinds, labels=labels, name=name, column_names=names,
                 categories=cats, class_names=class_names)


# --------------------------------------------------------------------------
# encoding and imputation

def encode_and_impute(t):
    """Ordinal-encode categorical columns in sorted order and fill missing cells.

    Numeric gaps get the column median, categorical gaps the column mode
    (ties to the smallest code). Idempotent.
    """
    values = t.values.copy()
    cats = list(t.categories)
    for j, kind in enumerate(t.column_kinds):
        col = values[:, j]
        present = ~np.isnan(col)
        if not present.any():
            raise EncodingError(f"column {t.column_names[j]!r} is entirely missing")
        if kind == CATEGORICAL:
            if cats[j] is not None:
                names = list(cats[j])
                used = sorted({names[int(c)] for c in col[present]})
                remap = {names.index(s): i for i, s in enumerate(used)}
                cats[j] = tuple(used)
            else:
                used = np.unique(col[present])
                remap = {v: i for i, v in enumerate(used.tolist())}
            coded = np.array([remap[c] if p else math.nan for c, p in zip(col.tolist(), present)])
            if not present.all():
                counts = np.bincount(coded[present].astype(np.int64))
                coded[~present] = int(np.argmax(counts))
            values[:, j] = coded
        elif not present.all():
            values[~present, j] = np.median(col[present])
    return replace(t, values=values, categories=tuple(cats))


# --------------------------------------------------------------------------
# splits

def _round_half_up(x):
    return int(math.floor(x + 0.5))


def stratified_split(t, seed, context_frac=0.8, context_size=None):
    """Seeded context/query partition.

    Classification tables are stratified: class ``c`` with ``n_c`` rows puts
    ``floor(frac * n_c)`` rows in the context, and the remaining slots up to
    ``round(frac * n)`` go one per class in class-index order. Every class
    keeps at least one context row and one query row. Regression tables are
    split without stratification. ``context_size`` (an absolute count)
    overrides ``context_frac``.
    """
    n = t.n
    if context_size is not None:
        if not 1 <= context_size < n:
            raise SplitError(f"context_size must be in [1, {n - 1}]")
        total = int(context_size)
        frac = total / n
    else:
        if not 0.0 < context_frac < 1.0:
            raise SplitError("context_frac must lie in (0, 1)")
        frac = float(context_frac)
        total = min(max(_round_half_up(frac * n), 1), n - 1)
    rng = cell_rng(t.name, seed, "split")
    if not t.is_classification:
        perm = rng.permutation(n)
        return Split(sorted(perm[:total].tolist()), sorted(perm[total:].tolist()), seed, False)

    classes = np.unique(t.labels)
    members = {c: np.flatnonzero(t.labels == c) for c in classes}
    for c, m in members.items():
        if m.size < 2:
            raise SplitError(f"class {c} has a single row; cannot stratify")
    take = {c: min(max(int(math.floor(frac * members[c].size)), 1), members[c].size - 1) for c in classes}
    short = total - sum(take.values())
    while short > 0:
        grew = False
        for c in classes:
            if short > 0 and take[c] < members[c].size - 1:
                take[c] += 1
                short -= 1
                grew = True
        if not grew:
            break
    ctx, qry = [], []
    for c in classes:
        perm = rng.permutation(members[c])
        ctx.extend(perm[:take[c]].tolist())
        qry.extend(perm[take[c]:].tolist())
    return Split(sorted(ctx), sorted(qry), seed, True)


# --------------------------------------------------------------------------
# synthetic generators

SYNTHETIC_KINDS = ("xor_2d", "quadrant_2d", "sign_1d", "random_labels", "balance_like",
                   "identical_marginal_stress", "binary_enumeration", "blobs")

_DEFAULT_SHAPES = {
    "xor_2d": {"n": 250, "d": 5},
    "quadrant_2d": {"n": 250, "d": 5},
    "sign_1d": {"n": 150, "d": 5},
    "random_labels": {"n": 150, "d": 5, "k": 2},
    "balance_like": {"n": 1000, "d": 12},
    "identical_marginal_stress": {"n": 800, "d": 12, "k": 5, "f": 1.0},
    "binary_enumeration": {"m": 3},
    "blobs": {"n": 200, "d": 2, "k": 2, "sep": 4.0},
}


def _flip(labels, rate, n_classes, rng):
    if rate <= 0:
        return labels
    flip = rng.random(labels.size) < rate
    shift = rng.integers(1, n_classes, size=labels.size)
    return np.where(flip, (labels + shift) % n_classes, labels)


def generate_synthetic(kind, params=None, seed=0):
    """Build a synthetic :class:`Table`, deterministic in ``(kind, params, seed)``.

    Shapes default to the benchmark sizes (xor_2d/quadrant_2d n=250 d=5,
    sign_1d/random_labels n=150 d=5, identical_marginal_stress n=800 d=12
    K=5). ``noise`` is a label-flip rate for the geometric tasks.
    """
    if kind not in _DEFAULT_SHAPES:
        raise DataError(f"unknown synthetic kind {kind!r}; expected one of {SYNTHETIC_KINDS}")
    p = dict(_DEFAULT_SHAPES[kind])
    p.update(params or {})
    name = kind if not params else kind + "".join(f":{k}={params[k]}" for k in sorted(params))
    rng = cell_rng(name, seed, "generate")

    if kind == "binary_enumeration":
        m = int(p["m"])
        if m < 1:
            raise DataError("binary_enumeration needs m >= 1")
        rows = np.array(list(itertools.product((0.0, 1.0), repeat=m)))
        return Table(rows, (CATEGORICAL,) * m, name=name)

    n, d = int(p["n"]), int(p["d"])
    if kind in ("xor_2d", "quadrant_2d", "sign_1d", "random_labels", "blobs"):
        need = {"xor_2d": 2, "quadrant_2d": 2, "sign_1d": 1, "random_labels": 1, "blobs": 1}[kind]
        if d < need:
            raise DataError(f"{kind} needs d >= {need}")
        if kind == "blobs":
            k = int(p["k"])
            labels = np.arange(n) % k
            rng.shuffle(labels)
            centers = rng.normal(size=(k, d))
            centers *= float(p["sep"]) / max(np.linalg.norm(centers, axis=1).min(), 1e-12)
            X = centers[labels] + rng.normal(size=(n, d))
            return Table(X, (NUMERIC,) * d, labels=labels, name=name)
        X = rng.uniform(-1.0, 1.0, size=(n, d))
        if kind == "xor_2d":
            labels = ((X[:, 0] > 0) != (X[:, 1] > 0)).astype(np.int64)
            k = 2
        elif kind == "quadrant_2d":
            right, up = X[:, 0] >= 0, X[:, 1] >= 0
            labels = np.select([right & up, ~right & up, ~right & ~up], [0, 1, 2], default=3)
            k = 4
        elif kind == "sign_1d":
            labels = (X[:, 0] > 0).astype(np.int64)
            k = 2
        else:
            k = int(p["k"])
            labels = rng.integers(0, k, size=n)
        labels = _flip(labels, float(p.get("noise", 0.0)), k, rng)
        return Table(X, (NUMERIC,) * d, labels=labels, name=name)

    if kind == "balance_like":
        if d % 4 or d < 4:
            raise DataError("balance_like needs d to be a positive multiple of 4")
        # each column is a balanced shuffle of the values 1..5
        base = np.resize(np.arange(1, 6, dtype=np.float64), n)
        X = np.column_stack([rng.permutation(base) for _ in range(d)])
        g = X.reshape(n, d // 4, 4)
        left = (g[:, :, 0] * g[:, :, 1]).sum(axis=1)
        right = (g[:, :, 2] * g[:, :, 3]).sum(axis=1)
        # class order follows the sorted names of balance-scale: B, L, R
        labels = np.select([left == right, left > right], [0, 1], default=2)
        return Table(X - 1.0, (CATEGORICAL,) * d, labels=labels, name=name,
                     class_names=("B", "L", "R"))

    # identical_marginal_stress
    f, k = float(p["f"]), int(p["k"])
    if not 0.0 <= f <= 1.0:
        raise DataError(f"invalid f={f}; must lie in [0, 1]")
    n_shared = _round_half_up(f * d)
    n_values = 5
    shared_probs = rng.dirichlet(np.ones(n_values))
    shared_counts = _counts_for(shared_probs, n)
    cols = []
    for j in range(d):
        if j < n_shared:
            counts = shared_counts
        else:
            support = int(rng.integers(2, n_values + 1))
            probs = np.zeros(n_values)
            probs[:support] = rng.dirichlet(np.full(support, 0.5))
            counts = _counts_for(probs, n)
        cols.append(rng.permutation(np.repeat(np.arange(n_values, dtype=np.float64), counts)))
    X = np.column_stack(cols)
    order = rng.permutation(d)
    X = X[:, order]
    # label depends on column identity through distinct weights
    w = rng.permutation(np.arange(1, d + 1, dtype=np.float64))
    score = X @ w
    edges = np.quantile(score, np.linspace(0, 1, k + 1)[1:-1])
    labels = np.searchsorted(edges, score, side="right")
    return Table(X, (CATEGORICAL,) * d, labels=labels, name=name)


def _counts_for(probs, n):
    """Integer counts summing to n, proportional to probs (largest remainder)."""
    raw = probs * n
    counts = np.floor(raw).astype(np.int64)
    rem = n - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:rem]] += 1
    return counts


def parse_dataset_uri(uri):
    """``synthetic:<kind>[:k=v...]`` -> (kind, params); anything else -> None."""
    if not uri.startswith("synthetic:"):
        return None
    parts = uri.split(":")[1:]
    kind, params = parts[0], {}
    for item in parts[1:]:
        if "=" not in item:
            raise DataError(f"bad synthetic parameter {item!r} in {uri!r}")
        k, v = item.split("=", 1)
        try:
            params[k] = int(v)
        except ValueError:
            try:
                params[k] = float(v)
            except ValueError:
                params[k] = v
    return kind, params


def load_dataset(uri, label_column="y", seed=0):
    """Resolve a CSV path or a ``synthetic:`` URI to an encoded table."""
    parsed = parse_dataset_uri(uri)
    if parsed is not None:
        kind, params = parsed
        t = generate_synthetic(kind, params, seed=seed)
        return replace(t, name=uri)
    return encode_and_impute(load_csv(uri, label_column))


# --------------------------------------------------------------------------
# externally dumped activations

_MANIFEST_KEYS = ("layer", "dataset", "seed", "split")


@dataclass
class ActivationRecord:
    layer: int
    dataset: str
    seed: int
    split: str
    path: Path
    labels_path: Path | None = None
    extras: dict = field(default_factory=dict)

    def load(self):
        return load_activation_matrix(self.path)

    def load_labels(self):
        if self.labels_path is None:
            return None
        return np.loadtxt(self.labels_path, delimiter=",", dtype=np.int64, ndmin=1)


def load_activation_matrix(path):
    """Headerless CSV of n rows x D reals."""
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"no such file: {path}")
    arr = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    if arr.size == 0:
        raise EmptyTableError(f"{path}: empty activation matrix")
    return arr


def read_manifest(path):
    """Parse a sidecar manifest of ``layer=<int> dataset=<name> seed=<int> split=<...>`` lines.

    Optional keys: ``file=`` (activation CSV, relative to the manifest;
    default ``<dataset>_s<seed>_<split>_L<layer>.csv``) and ``labels=``
    (headerless CSV of one class index per row).
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"no such file: {path}")
    root = path.parent
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            fields = dict(tok.split("=", 1) for tok in line.split() if "=" in tok)
            missing = [k for k in _MANIFEST_KEYS if k not in fields]
            if missing:
                raise DataError(f"{path}:{lineno}: missing keys {missing}")
            if fields["split"] not in ("context", "query"):
                raise DataError(f"{path}:{lineno}: split must be context or query")
            layer, seed = int(fields["layer"]), int(fields["seed"])
            fname = fields.get("file") or f"{fields['dataset']}_s{seed}_{fields['split']}_L{layer}.csv"
            labels = fields.get("labels")
            extras = {k: v for k, v in fields.items() if k not in _MANIFEST_KEYS + ("file", "labels")}
            records.append(ActivationRecord(layer, fields["dataset"], seed, fields["split"],
                                            root / fname, None if labels is None else root / labels,
                                            extras))
    if not records:
        raise EmptyTableError(f"{path}: manifest lists no activation files")
    return records


def default_output_dir():
    return Path(os.environ.get("TABAUDIT_OUTPUT_DIR", "tabaudit-out"))


_URI_SAFE = re.compile(r"[^A-Za-z0-9_.=-]+")


def safe_name(name):
    return _URI_SAFE.sub("_", name)
