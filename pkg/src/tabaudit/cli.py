"""Command-line front end: ``tabaudit <subcommand> [options]``.

Every run writes ``cells.csv``, ``summary.json`` and ``manifest.json`` into
the output directory. Exit status is 2 for configuration or input errors,
1 if any grid cell failed or a built-in check did not pass, 0 otherwise.
"""
import argparse
import configparser
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import attacks, geometry, invariance, readouts, report, stats, toy
from .data import DataError, default_output_dir, load_dataset, read_manifest, stratified_split
from .rng import RNG_ID

log = logging.getLogger("tabaudit")

SUBCOMMANDS = ("toy", "attack", "invariance", "geometry", "probe", "readout-grid", "stats")
DEFAULT_READOUTS = ("knn5", "prototype", "vote", "ridge", "majority")
# keys never echoed in the manifest: they may not change any output
_NOT_ECHOED = ("config", "output_dir", "workers", "command")


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# argument parsing

def _split_list(text):
    return [tok for tok in text.replace(",", " ").split() if tok]


def _add_common(p):
    p.add_argument("--config", help="INI file; [run] and [<subcommand>] sections")
    p.add_argument("--output-dir", help="default: $TABAUDIT_OUTPUT_DIR or ./tabaudit-out")
    p.add_argument("--seeds", type=int, help="number of seeds, 0..N-1 (default 5)")
    p.add_argument("--workers", type=int, help="process pool size (default 1)")
    p.add_argument("--verbose", "-v", action="store_true", default=None)


def _add_split(p):
    p.add_argument("--context-frac", type=float, help="context share per class (default 0.8)")
    p.add_argument("--context-size", type=int, help="absolute context size; overrides --context-frac")


def _add_datasets(p):
    p.add_argument("--dataset", action="append", help="CSV path or synthetic:<kind>[:k=v...]; repeatable")
    p.add_argument("--label-column", help="label column of CSV datasets (default y)")


def build_parser():
    parser = argparse.ArgumentParser(prog="tabaudit", description="Audit toolkit for tabular in-context classifiers.")
    parser.add_argument("--version", action="version", version=f"tabaudit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("toy", help="hand-built attention models on Boolean tasks")
    _add_common(p)
    p.add_argument("--m", type=int, help="number of Boolean columns (default 3)")

    p = sub.add_parser("attack", help="context-set attack grid")
    _add_common(p)
    _add_datasets(p)
    _add_split(p)
    p.add_argument("--attack", action="append", help=f"one of {', '.join(attacks.ATTACK_KINDS)}; repeatable")
    p.add_argument("--readout", action="append", help="readout name, optionally ova:<name>; repeatable")
    p.add_argument("--set", action="append", metavar="[ATTACK.]KEY=VALUE",
                   help="attack parameter override; repeatable")

    p = sub.add_parser("invariance", help="row/column/label permutation trials")
    _add_common(p)
    _add_datasets(p)
    _add_split(p)
    p.add_argument("--readout", action="append")
    p.add_argument("--trials", type=int, help="trials per seed and axis (default 3)")
    p.add_argument("--axes", help="comma list of row,column,label")
    p.add_argument("--tolerance", type=float, help="max abs probability delta (default 0.005)")
    p.add_argument("--external", help="CSV of externally produced per-query probabilities")
    p.add_argument("--emit-trials", action="store_true", default=None,
                   help="also write trials.csv and splits.csv for external runners")

    p = sub.add_parser("geometry", help="spectral and neighbourhood geometry")
    _add_common(p)
    _add_datasets(p)
    p.add_argument("--manifest", help="activation manifest")
    p.add_argument("--js-tolerance", type=float, help="JS screen tolerance (default 0.05)")

    p = sub.add_parser("probe", help="linear probes on features or dumped activations")
    _add_common(p)
    _add_datasets(p)
    _add_split(p)
    p.add_argument("--manifest", help="activation manifest with context and query splits")
    p.add_argument("--regularization", type=float, help="inverse L2 strength C (default 1.0)")

    p = sub.add_parser("readout-grid", help="accuracy and calibration of every readout")
    _add_common(p)
    _add_datasets(p)
    _add_split(p)
    p.add_argument("--readout", action="append")

    p = sub.add_parser("stats", help="paired statistics over an existing cells.csv")
    _add_common(p)
    p.add_argument("--cells", help="ReportCell CSV")
    p.add_argument("--metric")
    p.add_argument("--treatment", help="treatment condition")
    p.add_argument("--baseline", help="baseline condition")
    p.add_argument("--resamples", type=int, help="bootstrap resamples (default 10000)")
    return parser


DEFAULTS = {
    "seeds": 5, "workers": 1, "verbose": False, "m": 3, "label_column": "y",
    "context_frac": 0.8, "context_size": None, "attack": ["none"], "readout": list(DEFAULT_READOUTS),
    "set": [], "trials": 3, "axes": ",".join(invariance.AXES),
    "tolerance": invariance.DEFAULT_TOLERANCE, "external": None, "emit_trials": False,
    "manifest": None, "js_tolerance": 0.05, "regularization": 1.0, "cells": None,
    "metric": None, "treatment": None, "baseline": None, "resamples": 10_000, "dataset": None,
}


def _subparser(parser, name):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def _apply_config(parser, args):
    """Fill options not given on the command line from the INI file."""
    if not args.config:
        return
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(args.config, encoding="utf-8") as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    actions = {a.dest: a for a in _subparser(parser, args.command)._actions if a.dest not in ("help", "config")}
    for section in cp.sections():
        if section not in ("run",) + SUBCOMMANDS:
            raise ConfigError(f"{args.config}: unknown section [{section}]")
    # the subcommand section wins over [run]; the command line wins over both
    for section in (args.command, "run"):
        if not cp.has_section(section):
            continue
        for key, raw in cp.items(section):
            dest = key.replace("-", "_")
            if dest not in actions:
                if section == "run":
                    continue
                raise ConfigError(f"{args.config}: [{section}] unknown key {key!r}")
            if getattr(args, dest) is not None:
                continue
            action = actions[dest]
            try:
                if isinstance(action, argparse._AppendAction):
                    value = _split_list(raw)
                elif isinstance(action, argparse._StoreTrueAction):
                    value = cp.getboolean(section, key)
                elif action.type is not None:
                    value = action.type(raw)
                else:
                    value = raw.strip()
            except ValueError as exc:
                raise ConfigError(f"{args.config}: [{section}] {key}: {exc}") from None
            setattr(args, dest, value)
    # sections of other subcommands are checked too, so one file can serve every run
    known = set()
    for name in SUBCOMMANDS:
        sub_actions = {a.dest: a for a in _subparser(parser, name)._actions}
        known |= set(sub_actions)
        if name == args.command or not cp.has_section(name):
            continue
        for key, raw in cp.items(name):
            action = sub_actions.get(key.replace("-", "_"))
            if action is None or action.dest in ("help", "config"):
                raise ConfigError(f"{args.config}: [{name}] unknown key {key!r}")
            if action.type is not None and not isinstance(action, argparse._AppendAction):
                try:
                    action.type(raw)
                except ValueError as exc:
                    raise ConfigError(f"{args.config}: [{name}] {key}: {exc}") from None
    if cp.has_section("run"):
        for key in cp.options("run"):
            if key.replace("-", "_") not in known:
                raise ConfigError(f"{args.config}: [run] unknown key {key!r}")


def resolve(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    _apply_config(parser, args)
    for key, value in DEFAULTS.items():
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, value)
    if args.seeds < 1:
        raise ConfigError("--seeds must be at least 1")
    if args.workers < 1:
        raise ConfigError("--workers must be at least 1")
    if args.output_dir is None:
        args.output_dir = str(default_output_dir())
    return args


def parse_overrides(items, kinds):
    """``[attack.]key=value`` strings -> {attack kind: {key: value}}."""
    out = {k: {} for k in kinds}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        value = _coerce(raw)
        if "." in key:
            kind, key = key.split(".", 1)
            if kind not in out:
                raise ConfigError(f"override {item!r} targets an attack not in this run")
            targets = [kind]
        else:
            targets = [k for k in kinds if key in attacks.ATTACK_DEFAULTS.get(k, {})]
        targets = [k for k in targets if key in attacks.ATTACK_DEFAULTS.get(k, {})]
        if not targets:
            raise ConfigError(f"override key {key!r} is not a parameter of {', '.join(kinds)}")
        for k in targets:
            out[k][key] = value
    return out


def _coerce(raw):
    raw = raw.strip()
    if raw.lower() == "none":
        return None
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    return raw


# --------------------------------------------------------------------------
# jobs; top-level so the process pool can pickle them

def _attack_job(job):
    table, seed, specs, names, frac, size = job
    return attacks.attack_cell(table, seed, specs, names, frac, size)


def _classifier(name):
    if name.startswith("ova:"):
        base = readouts.get_readout(name[4:])

        def run(ctx_X, ctx_y, qry_X, n_classes):
            res = readouts.ova_wrap(base, ctx_X, ctx_y, qry_X, n_classes)
            return res.probs, res.predictions
        return run
    return readouts.get_readout(name)


def _invariance_job(job):
    table, name, seed, trials, axes, tol, frac, size = job
    try:
        res = invariance.invariance_grid(_classifier(name), table, (seed,), trials, axes, tol, frac, size)
    except Exception as exc:
        return [], [(table.name, seed, name, f"{type(exc).__name__}: {exc}")]
    return res.cells(table.name, name), []


def _readout_job(job):
    table, name, seed, frac, size = job
    try:
        split = stratified_split(table, seed, frac, size)
        ctx, qry = np.asarray(split.context_idx), np.asarray(split.query_idx)
        args = (table.values[ctx], table.labels[ctx], table.values[qry], table.n_classes)
        P = readouts.get_readout(name)(*args)
        pred = readouts.predict_labels(name, *args)
        y = table.labels[qry]
        ece, nll = stats.calibration(P, y)
    except Exception as exc:
        return [], [(table.name, seed, name, f"{type(exc).__name__}: {exc}")]
    acc = float(np.mean(pred == y))
    return [report.ReportCell(table.name, seed, name, "accuracy", acc),
            report.ReportCell(table.name, seed, name, "ece", ece),
            report.ReportCell(table.name, seed, name, "nll", nll)], []


def _probe_job(job):
    name, seed, cond, Xtr, ytr, Xev, yev, C = job
    try:
        res = readouts.linear_probe(Xtr, ytr, Xev, yev, regularization=C, seed=seed)
    except Exception as exc:
        return [], [(name, seed, cond, f"{type(exc).__name__}: {exc}")]
    return [report.ReportCell(name, seed, cond, "probe_acc", res.accuracy),
            report.ReportCell(name, seed, cond, "converged", float(res.converged))], []


def _geometry_cells(name, seed, cond, reps, labels):
    cells, failures = [], []

    def add(metric, fn):
        try:
            cells.append(report.ReportCell(name, seed, cond, metric, float(fn())))
        except Exception as exc:
            failures.append((name, seed, f"{cond}/{metric}", f"{type(exc).__name__}: {exc}"))

    summary = geometry.spectrum_summary(reps)
    cells.append(report.ReportCell(name, seed, cond, "effective_rank", summary.effective_rank))
    cells.append(report.ReportCell(name, seed, cond, "participation_ratio", summary.participation_ratio))
    add("twonn_id", lambda: geometry.twonn(reps).dimension)
    if labels is not None and np.unique(labels).size >= 2:
        add("silhouette_cosine", lambda: geometry.silhouette(reps, labels, "cosine"))
    return cells, failures


def _geometry_job(job):
    name, seed, cond, reps, labels = job
    try:
        return _geometry_cells(name, seed, cond, reps, labels)
    except Exception as exc:
        return [], [(name, seed, cond, f"{type(exc).__name__}: {exc}")]


def run_jobs(fn, jobs, workers):
    """Order-preserving map; results never depend on ``workers``."""
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(fn, jobs))


def _collect(results):
    cells, failures = [], []
    for c, f in results:
        cells.extend(c)
        failures.extend(f)
    return cells, failures


# --------------------------------------------------------------------------
# subcommands

@dataclass
class Outcome:
    cells: list
    failures: list
    checks: dict
    extra: dict


def _load_tables(args):
    if not args.dataset:
        raise ConfigError("at least one --dataset is required")
    tables = []
    for uri in args.dataset:
        tables.append(load_dataset(uri, args.label_column))
    names = [t.name for t in tables]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate dataset names: {names}")
    return tables


def _classification(tables):
    for t in tables:
        if not t.is_classification:
            raise ConfigError(f"{t.name}: this subcommand needs a classification target")
    return tables


def _check_readouts(names):
    for n in names:
        readouts.get_readout(n)
    return names


def cmd_toy(args, out):
    if not 1 <= args.m <= 10:
        raise ConfigError("--m must lie in 1..10")
    cells, rows = [], []
    grid = {}
    for model in toy.MODELS:
        accs = []
        for task in toy.TASKS:
            try:
                acc = toy.toy_predict(model, toy.ToyTask(task, args.m)).accuracy
            except toy.ToyError:
                continue
            accs.append(acc)
            cells.append(report.ReportCell("toy", 0, f"m{args.m}/{model}/{task}", "accuracy", float(acc)))
            ref = toy.REFERENCE_TABLE[model][toy.TASKS.index(task)] if args.m == 3 else None
            rows.append((model, task, args.m, acc, ref))
        grid[model] = tuple(accs)
    for task in toy.TASKS:
        cells.append(report.ReportCell("toy", 0, f"m{args.m}/bound/{task}", "accuracy",
                                       float(toy.orbit_bound(toy.ToyTask(task, args.m)))))
    checks = {}
    if args.m == 3:
        for mode in toy.ABLATION_MODES:
            acc = toy.ablation_modes(toy.ToyTask("A", 3), mode)
            cells.append(report.ReportCell("toy", 0, f"m3/ablation/{mode}/A", "accuracy", float(acc)))
            rows.append((mode, "A", 3, acc, toy.REFERENCE_ABLATION_TASK_A[mode]))
        checks["handcraft_table"] = toy.handcraft_matches_reference(grid)
        checks["ablation_task_a"] = all(
            toy.ablation_modes(toy.ToyTask("A", 3), m) == v for m, v in toy.REFERENCE_ABLATION_TASK_A.items())
    lines = ["model,task,m,accuracy,reference,match"]
    for model, task, m, acc, ref in rows:
        lines.append(f"{model},{task},{m},{acc},{'' if ref is None else ref},"
                     f"{'' if ref is None else int(acc == ref)}")
    (out / "toy_grid.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return Outcome(cells, [], checks, {})


def cmd_attack(args, out):
    tables = _classification(_load_tables(args))
    names = _check_readouts(args.readout)
    kinds = list(dict.fromkeys(args.attack))
    overrides = parse_overrides(args.set, kinds)
    specs = [attacks.AttackSpec(k, overrides[k]) for k in kinds]
    jobs = [(t, seed, specs, names, args.context_frac, args.context_size)
            for t in tables for seed in range(args.seeds)]
    cells, failures = _collect(run_jobs(_attack_job, jobs, args.workers))
    extra = {"attack_params": {s.kind: s.params for s in specs}}
    return Outcome(cells, failures, {}, extra)


def _axes(args):
    axes = tuple(_split_list(args.axes))
    bad = [a for a in axes if a not in invariance.AXES]
    if bad or not axes:
        raise ConfigError(f"--axes must be drawn from {invariance.AXES}")
    if args.trials < 1:
        raise ConfigError("--trials must be at least 1")
    return axes


def cmd_invariance(args, out):
    tables = _classification(_load_tables(args))
    axes = _axes(args)
    seeds = range(args.seeds)
    if args.emit_trials or args.external:
        if len(tables) != 1:
            raise ConfigError("--emit-trials/--external take exactly one --dataset")
        t = tables[0]
        splits = {s: stratified_split(t, s, args.context_frac, args.context_size) for s in seeds}
        trials = invariance.trial_grid(t, splits.__getitem__, seeds, args.trials, axes)
        if args.emit_trials:
            invariance.write_trials(trials, out / "trials.csv")
            lines = ["seed,role,index"]
            for s, sp in splits.items():
                lines += [f"{s},context,{i}" for i in sp.context_idx]
                lines += [f"{s},query,{i}" for i in sp.query_idx]
            (out / "splits.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        if args.external:
            preds = invariance.read_external_predictions(args.external)
            labels = {s: t.labels[np.asarray(sp.query_idx)] for s, sp in splits.items()}
            res = invariance.external_invariance(preds, trials, labels, args.tolerance)
            return Outcome(res.cells(t.name, "external"), [], {}, {"external": res.summary()})
    names = _check_readouts(args.readout)
    jobs = [(t, name, seed, args.trials, axes, args.tolerance, args.context_frac, args.context_size)
            for t in tables for name in names for seed in seeds]
    cells, failures = _collect(run_jobs(_invariance_job, jobs, args.workers))
    return Outcome(cells, failures, {}, {})


def _manifest_groups(path):
    records = read_manifest(path)
    groups = {}
    for r in records:
        groups.setdefault((r.dataset, r.seed, r.layer), {})[r.split] = r
    return groups


def cmd_geometry(args, out):
    if not args.manifest and not args.dataset:
        raise ConfigError("geometry needs --manifest or --dataset")
    jobs = []
    js_cells = []
    if args.manifest:
        for (ds, seed, layer), parts in sorted(_manifest_groups(args.manifest).items()):
            for split, rec in sorted(parts.items()):
                jobs.append((ds, seed, f"L{layer}/{split}", rec.load(), rec.load_labels()))
    if args.dataset:
        for t in _load_tables(args):
            screen = geometry.js_marginal_screen(t, args.js_tolerance)
            js_cells.append(report.ReportCell(t.name, 0, "features", "js_identical_marginals", screen.largest))
            mean, scale = readouts.standardizer(t.values)
            jobs.append((t.name, 0, "features", (t.values - mean) / scale, t.labels))
    cells, failures = _collect(run_jobs(_geometry_job, jobs, args.workers))
    return Outcome(cells + js_cells, failures, {}, {})


def cmd_probe(args, out):
    if not args.manifest and not args.dataset:
        raise ConfigError("probe needs --manifest or --dataset")
    if args.regularization <= 0:
        raise ConfigError("--regularization must be positive")
    jobs, failures = [], []
    if args.manifest:
        for (ds, seed, layer), parts in sorted(_manifest_groups(args.manifest).items()):
            cond = f"L{layer}"
            if set(parts) != {"context", "query"}:
                failures.append((ds, seed, cond, "needs both context and query activations"))
                continue
            ctx, qry = parts["context"], parts["query"]
            yc, yq = ctx.load_labels(), qry.load_labels()
            if yc is None or yq is None:
                failures.append((ds, seed, cond, "labels= missing from manifest"))
                continue
            jobs.append((ds, seed, cond, ctx.load(), yc, qry.load(), yq, args.regularization))
    if args.dataset:
        for t in _classification(_load_tables(args)):
            for seed in range(args.seeds):
                sp = stratified_split(t, seed, args.context_frac, args.context_size)
                c, q = np.asarray(sp.context_idx), np.asarray(sp.query_idx)
                jobs.append((t.name, seed, "features", t.values[c], t.labels[c], t.values[q], t.labels[q],
                             args.regularization))
    cells, fails = _collect(run_jobs(_probe_job, jobs, args.workers))
    return Outcome(cells, failures + fails, {}, {})


def cmd_readout_grid(args, out):
    tables = _classification(_load_tables(args))
    names = _check_readouts(args.readout)
    jobs = [(t, name, seed, args.context_frac, args.context_size)
            for t in tables for name in names for seed in range(args.seeds)]
    cells, failures = _collect(run_jobs(_readout_job, jobs, args.workers))
    return Outcome(cells, failures, {}, {})


def cmd_stats(args, out):
    if not args.cells:
        raise ConfigError("stats needs --cells")
    try:
        cells = report.read_cells(args.cells)
    except (OSError, report.ReportError, ValueError, IndexError) as exc:
        raise ConfigError(f"cannot read {args.cells}: {exc}") from None
    if not args.treatment:
        return Outcome(cells, [], {}, {})
    if not (args.baseline and args.metric):
        raise ConfigError("--treatment needs --baseline and --metric")
    try:
        deltas = stats.paired_deltas(cells, args.treatment, args.baseline, args.metric)
    except stats.StatsError as exc:
        raise ConfigError(str(exc)) from None
    cond = f"{args.treatment}-vs-{args.baseline}"
    out_cells = [report.ReportCell(ds, 0, cond, f"delta_{args.metric}", v) for ds, v in deltas.items()]
    d = list(deltas.values())
    extra = {"paired": {"treatment": args.treatment, "baseline": args.baseline, "metric": args.metric,
                        "n_datasets": len(d), "mean_delta": float(np.mean(d))}}
    if len(d) >= 2:
        extra["paired"]["ci95"] = list(stats.paired_bootstrap_ci(d, args.resamples))
    try:
        w = stats.wilcoxon_signed_rank(d)
        extra["paired"]["wilcoxon"] = {"statistic": w.statistic, "p": w.p, "n": w.n, "method": w.method}
    except stats.StatsError as exc:
        extra["paired"]["wilcoxon"] = str(exc)
    return Outcome(out_cells, [], {}, extra)


COMMANDS = {"toy": cmd_toy, "attack": cmd_attack, "invariance": cmd_invariance, "geometry": cmd_geometry,
            "probe": cmd_probe, "readout-grid": cmd_readout_grid, "stats": cmd_stats}


# --------------------------------------------------------------------------
# outputs

def summarize(cells, resamples=10_000):
    """Per (condition, metric) aggregates, with a bootstrap CI over datasets when there are several."""
    out = {}
    keys = sorted({(c.condition, c.metric) for c in cells})
    for cond, metric in keys:
        agg = stats.dataset_aggregate(cells, metric, cond)
        entry = {"mean": agg.grand_mean, "flat_mean": agg.flat_mean, "n_datasets": agg.n_datasets,
                 "n_cells": agg.n_cells, "per_dataset": agg.per_dataset}
        if agg.n_datasets >= 2:
            lo, hi = stats.paired_bootstrap_ci(list(agg.per_dataset.values()), resamples)
            entry["ci95"] = [lo, hi]
        out[f"{cond}|{metric}"] = entry
    return out


def run_manifest(args):
    config = {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_ECHOED}
    return {"command": args.command, "config": config, "version": __version__, "rng": RNG_ID}


def run(args):
    """Execute a resolved configuration; returns the exit status."""
    out = Path(args.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc}") from None
    result = COMMANDS[args.command](args, out)
    for ds, seed, cond, msg in result.failures:
        log.error("cell failed: dataset=%s seed=%s condition=%s: %s", ds, seed, cond, msg)
    summary = {"checks": result.checks, "failures": [list(f) for f in sorted(result.failures, key=str)],
               **result.extra}
    if result.cells:
        report.emit_report(result.cells, out / "cells.csv")
        summary["aggregate"] = summarize(result.cells, args.resamples if args.command == "stats" else 10_000)
    else:
        log.error("no report cells were produced")
    (out / "summary.json").write_text(report.dumps_json(summary), encoding="utf-8")
    (out / "manifest.json").write_text(report.dumps_json(run_manifest(args)), encoding="utf-8")
    for name, ok in result.checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    if result.failures or not result.cells or not all(result.checks.values()):
        return 1
    return 0


def main(argv=None):
    try:
        args = resolve(argv)
    except ConfigError as exc:
        print(f"tabaudit: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (ConfigError, DataError, attacks.AttackError, readouts.ReadoutError,
            invariance.InvarianceError, report.ReportError) as exc:
        print(f"tabaudit: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
