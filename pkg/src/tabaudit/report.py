"""ReportCell rows and their CSV / JSON serialisation.

The CSV contract is fixed: header ``dataset,seed,condition,metric,value``,
rows sorted by ``(dataset, seed, condition, metric)``, floats written with
``repr`` so that parse -> emit round-trips byte for byte.
"""
import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

COLUMNS = ("dataset", "seed", "condition", "metric", "value")


@dataclass(frozen=True, order=True)
class ReportCell:
    dataset: str
    seed: int
    condition: str
    metric: str
    value: float


class ReportError(ValueError):
    pass


def _fmt(v):
    v = float(v)
    return repr(v)


def sort_cells(cells):
    cells = sorted(cells, key=lambda c: (c.dataset, c.seed, c.condition, c.metric))
    seen = set()
    for c in cells:
        key = (c.dataset, c.seed, c.condition, c.metric)
        if key in seen:
            raise ReportError(f"duplicate report cell {key}")
        seen.add(key)
    return cells


def cells_to_csv(cells):
    cells = sort_cells(cells)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for c in cells:
        w.writerow((c.dataset, int(c.seed), c.condition, c.metric, _fmt(c.value)))
    return buf.getvalue()


def cells_from_csv(text):
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != COLUMNS:
        raise ReportError(f"expected header {','.join(COLUMNS)}")
    return [ReportCell(r[0], int(r[1]), r[2], r[3], float(r[4])) for r in rows[1:] if r]


def read_cells(path):
    return cells_from_csv(Path(path).read_text(encoding="utf-8"))


def emit_report(cells, path, format="csv", aggregate=None):
    """Write cells as CSV, or as JSON with an optional aggregate block."""
    cells = list(cells)
    if not cells:
        raise ReportError("refusing to write an empty report")
    path = Path(path)
    if format == "csv":
        text = cells_to_csv(cells)
    elif format == "json":
        payload = {"columns": list(COLUMNS), "cells": [asdict(c) for c in sort_cells(cells)]}
        if aggregate is not None:
            payload["aggregate"] = aggregate
        text = dumps_json(payload)
    else:
        raise ReportError(f"unknown report format {format!r}")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if hasattr(o, "item") and callable(o.item):
        o = o.item()
    if isinstance(o, float) and not math.isfinite(o):
        return None
    return o


def dumps_json(payload):
    return json.dumps(_jsonable(payload), indent=2, sort_keys=True, allow_nan=False) + "\n"
