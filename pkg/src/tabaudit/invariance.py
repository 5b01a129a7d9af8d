"""Row / column / label permutation trials and prediction-agreement reports."""
import csv
import io
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import Split, stratified_split
from .report import ReportCell
from .rng import cell_rng

AXES = ("row", "column", "label")
DEFAULT_TOLERANCE = 0.005
# absolute slack so that a delta of exactly the tolerance survives float noise
_FLOAT_SLACK = 1e-12


class InvarianceError(ValueError):
    pass


@dataclass(frozen=True)
class PermutationTrial:
    axis: str
    permutation: tuple
    seed: int = 0
    index: int = 0

    def __post_init__(self):
        if self.axis not in AXES:
            raise InvarianceError(f"unknown axis {self.axis!r}")
        perm = tuple(int(i) for i in self.permutation)
        if sorted(perm) != list(range(len(perm))):
            raise InvarianceError(f"{self.axis} permutation is not a bijection: {perm}")
        object.__setattr__(self, "permutation", perm)

    def inverse(self):
        inv = np.empty(len(self.permutation), dtype=np.int64)
        inv[list(self.permutation)] = np.arange(len(self.permutation))
        return replace(self, permutation=tuple(inv.tolist()))


def apply_permutation(table, split, trial):
    """Return the permuted ``(table, split)``.

    row: context rows are visited in the order ``context_idx[pi]``; queries
    stay put. column: column ``j`` of the result is column ``pi[j]`` of the
    input. label: class ``c`` becomes ``pi[c]``; compare outputs through
    :func:`unpermute_probs`.
    """
    pi = np.asarray(trial.permutation, dtype=np.int64)
    if trial.axis == "row":
        if pi.size != len(split.context_idx):
            raise InvarianceError("row permutation must cover the context rows")
        ctx = tuple(np.asarray(split.context_idx)[pi].tolist())
        return table, Split(ctx, split.query_idx, split.seed, split.stratified)
    if trial.axis == "column":
        if pi.size != table.d:
            raise InvarianceError("column permutation must cover every column")
        return replace(
            table,
            values=table.values[:, pi],
            column_kinds=tuple(table.column_kinds[j] for j in pi),
            column_names=tuple(table.column_names[j] for j in pi),
            categories=tuple(table.categories[j] for j in pi),
        ), split
    if not table.is_classification:
        raise InvarianceError("label permutations need a classification table")
    if pi.size != table.n_classes:
        raise InvarianceError("label permutation must cover every class")
    names = None
    if table.class_names is not None:
        names = [None] * pi.size
        for c, name in enumerate(table.class_names):
            names[pi[c]] = name
        names = tuple(names)
    return replace(table, labels=pi[table.labels], class_names=names), split


def unpermute_probs(probs, trial):
    """Map outputs of a label-permuted run back to the original class order."""
    P = np.asarray(probs)
    if trial.axis != "label":
        return P
    return P[:, list(trial.permutation)]


def unpermute_labels(pred, trial):
    if trial.axis != "label":
        return np.asarray(pred)
    inv = np.asarray(trial.inverse().permutation)
    return inv[np.asarray(pred)]


@dataclass(frozen=True)
class AgreementReport:
    mean_abs_prob_delta: float
    max_abs_prob_delta: float
    label_agreement: float
    exact_within_tol: bool


def agreement(base_probs, permuted_probs, tolerance=DEFAULT_TOLERANCE, base_pred=None, permuted_pred=None):
    """Absolute probability deltas and argmax agreement between two runs.

    The tolerance bound is inclusive. Explicit hard predictions may be passed
    when the classifier has its own tie rule.
    """
    A = np.asarray(base_probs, dtype=np.float64)
    B = np.asarray(permuted_probs, dtype=np.float64)
    if A.shape != B.shape:
        raise InvarianceError(f"shape mismatch {A.shape} vs {B.shape}")
    delta = np.abs(A - B)
    pa = A.argmax(axis=1) if base_pred is None else np.asarray(base_pred)
    pb = B.argmax(axis=1) if permuted_pred is None else np.asarray(permuted_pred)
    mx = float(delta.max()) if delta.size else 0.0
    return AgreementReport(float(delta.mean()) if delta.size else 0.0, mx,
                           float(np.mean(pa == pb)) if pa.size else 1.0,
                           mx <= tolerance + _FLOAT_SLACK)


@dataclass(frozen=True)
class Spread:
    best: float
    worst: float
    spread_pp: float


def spread(accuracies):
    acc = np.asarray(list(accuracies), dtype=np.float64)
    if acc.size == 0:
        raise InvarianceError("spread needs at least one trial")
    return Spread(float(acc.max()), float(acc.min()), float((acc.max() - acc.min()) * 100))


# --------------------------------------------------------------------------
# grids

def trial_grid(table, split_for_seed, seeds, trials_per_seed, axes=AXES):
    """Seeded permutation trials, keyed by (table name, seed, axis, trial index)."""
    out = []
    for seed in seeds:
        split = split_for_seed(seed)
        for axis in axes:
            size = {"row": len(split.context_idx), "column": table.d,
                    "label": table.n_classes}[axis]
            for j in range(trials_per_seed):
                rng = cell_rng(table.name, seed, f"invariance/{axis}/{j}")
                out.append(PermutationTrial(axis, tuple(rng.permutation(size).tolist()), seed, j))
    return out


@dataclass(frozen=True)
class TrialOutcome:
    trial: PermutationTrial
    report: AgreementReport
    accuracy: float
    base_accuracy: float


@dataclass
class InvarianceResult:
    outcomes: list
    tolerance: float

    def by_axis(self, axis):
        return [o for o in self.outcomes if o.trial.axis == axis]

    def summary(self):
        out = {}
        for axis in AXES:
            rows = self.by_axis(axis)
            if not rows:
                continue
            sp = spread([o.accuracy for o in rows])
            out[axis] = {
                "trials": len(rows),
                "label_agreement": float(np.mean([o.report.label_agreement for o in rows])),
                "mean_abs_prob_delta": float(np.mean([o.report.mean_abs_prob_delta for o in rows])),
                "max_abs_prob_delta": float(max(o.report.max_abs_prob_delta for o in rows)),
                "within_tol": float(np.mean([o.report.exact_within_tol for o in rows])),
                "best": sp.best, "worst": sp.worst, "spread_pp": sp.spread_pp,
            }
        return out

    def cells(self, dataset, condition):
        cells = []
        for o in self.outcomes:
            cond = f"{condition}/{o.trial.axis}/t{o.trial.index}"
            for metric, value in (("label_agreement", o.report.label_agreement),
                                  ("mean_abs_prob_delta", o.report.mean_abs_prob_delta),
                                  ("max_abs_prob_delta", o.report.max_abs_prob_delta),
                                  ("within_tol", float(o.report.exact_within_tol)),
                                  ("accuracy", o.accuracy)):
                cells.append(ReportCell(dataset, o.trial.seed, cond, metric, float(value)))
        return cells


def _predict(classifier, table, split):
    ctx = np.asarray(split.context_idx)
    qry = np.asarray(split.query_idx)
    out = classifier(table.values[ctx], table.labels[ctx], table.values[qry], table.n_classes)
    if isinstance(out, tuple):
        return np.asarray(out[0]), np.asarray(out[1])
    P = np.asarray(out)
    return P, P.argmax(axis=1)


def invariance_grid(classifier, table, seeds=(0,), trials_per_seed=3, axes=AXES,
                    tolerance=DEFAULT_TOLERANCE, context_frac=0.8, context_size=None):
    """Run every trial against the unpermuted baseline of its seed.

    ``classifier(ctx_X, ctx_y, qry_X, n_classes)`` returns probabilities, or
    a ``(probs, predictions)`` pair when it has its own argmax tie rule.
    """
    splits = {}

    def split_for(seed):
        if seed not in splits:
            splits[seed] = stratified_split(table, seed, context_frac, context_size)
        return splits[seed]

    trials = trial_grid(table, split_for, seeds, trials_per_seed, axes)
    base = {}
    outcomes = []
    for tr in trials:
        split = split_for(tr.seed)
        y_q = table.labels[np.asarray(split.query_idx)]
        if tr.seed not in base:
            try:
                base[tr.seed] = _predict(classifier, table, split)
            except Exception as exc:
                raise InvarianceError(f"classifier failed on baseline seed={tr.seed}: {exc}") from exc
        P0, y0 = base[tr.seed]
        try:
            t2, s2 = apply_permutation(table, split, tr)
            P1, y1 = _predict(classifier, t2, s2)
        except InvarianceError:
            raise
        except Exception as exc:
            raise InvarianceError(
                f"classifier failed on axis={tr.axis} seed={tr.seed} trial={tr.index}: {exc}") from exc
        P1, y1 = unpermute_probs(P1, tr), unpermute_labels(y1, tr)
        rep = agreement(P0, P1, tolerance, y0, y1)
        outcomes.append(TrialOutcome(tr, rep, float(np.mean(y1 == y_q)), float(np.mean(y0 == y_q))))
    return InvarianceResult(outcomes, tolerance)


# --------------------------------------------------------------------------
# external predictions

PRED_COLUMNS = ("axis", "seed", "trial", "query")


def trials_to_csv(trials):
    """Trial grid as ``axis,seed,trial,permutation`` with space-separated indices."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("axis", "seed", "trial", "permutation"))
    for t in trials:
        w.writerow((t.axis, t.seed, t.index, " ".join(map(str, t.permutation))))
    return buf.getvalue()


def read_external_predictions(path):
    """Load ``axis,seed,trial,query,p0,p1,...`` rows.

    The baseline run of a seed uses ``axis=base`` and ``trial=0``. Label-axis
    rows hold the raw outputs of the permuted run (not yet un-permuted).
    Returns ``{(axis, seed, trial): (q, C) array}``.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0][:4]) != PRED_COLUMNS:
        raise InvarianceError(f"{path}: expected header starting with {','.join(PRED_COLUMNS)}")
    n_prob = len(rows[0]) - 4
    if n_prob < 1:
        raise InvarianceError(f"{path}: no probability columns")
    groups = {}
    for r in rows[1:]:
        if not r:
            continue
        key = (r[0], int(r[1]), int(r[2]))
        groups.setdefault(key, []).append((int(r[3]), [float(v) for v in r[4:4 + n_prob]]))
    return {k: np.array([p for _, p in sorted(v)]) for k, v in groups.items()}


def external_invariance(predictions, trials, query_labels=None, tolerance=DEFAULT_TOLERANCE):
    """Agreement of externally produced predictions over a regenerated trial grid."""
    outcomes = []
    for tr in trials:
        try:
            P0 = predictions[("base", tr.seed, 0)]
            P1 = predictions[(tr.axis, tr.seed, tr.index)]
        except KeyError as exc:
            raise InvarianceError(f"missing external predictions for {exc.args[0]}") from None
        P1 = unpermute_probs(P1, tr)
        acc = base_acc = float("nan")
        if query_labels is not None:
            y = np.asarray(query_labels[tr.seed])
            acc, base_acc = float(np.mean(P1.argmax(1) == y)), float(np.mean(P0.argmax(1) == y))
        outcomes.append(TrialOutcome(tr, agreement(P0, P1, tolerance), acc, base_acc))
    return InvarianceResult(outcomes, tolerance)


def write_trials(trials, path):
    Path(path).write_text(trials_to_csv(trials), encoding="utf-8")
