"""Command-line entry point: ``ensemblepool {split,pool,evaluate,experiment}``."""
from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

from . import io
from .core import EnsemblePoolError, FoldRole, Partition
from .metrics import evaluate
from .poolers import FittedPooler, PoolerKind, fit_pooler, needs_fitting, pool
from .sampling import KFoldSpec, SplitRatios, kfold_split, percentage_split
from .simulate import config_from_dict, config_to_dict, run_experiments

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("ensemblepool")


class CliError(EnsemblePoolError):
    pass


def _emit(text: str, out=None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        io.atomic_write_text(out, text)


def format_table(header, rows) -> str:
    cells = [[str(h) for h in header]] + [[_cell(v) for v in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) if j else c.ljust(w) for j, (c, w) in enumerate(zip(r, widths))) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _cell(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


# --------------------------------------------------------------------------- split

def _parse_ratios(text: str) -> SplitRatios:
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        raise CliError(f"--ratios: cannot parse {text!r}") from None
    if len(values) != 4:
        raise CliError("--ratios: expected four comma-separated fractions")
    try:
        return SplitRatios(*values)
    except ValueError as exc:
        raise CliError(f"--ratios: {exc}") from None


def cmd_split(args) -> int:
    labels = io.read_labels(args.labels)
    ratios = _parse_ratios(args.ratios)
    split = percentage_split(labels, ratios, args.seed, args.stratified)
    meta = dict(seed=args.seed, stratified=args.stratified, ratios=list(ratios.as_tuple()))
    counts = split.counts()
    rows = [[p.value, counts.get(p, 0), counts.get(p, 0) / len(labels)] for p in Partition]
    if args.kfold:
        folds = kfold_split(labels, split, KFoldSpec(args.kfold, args.seed))
        doc = io.kfold_to_dict(split, folds, **meta)
        for i, fold in enumerate(folds):
            fc = fold.counts()
            n_train, n_val = fc.get(FoldRole.FOLD_TRAIN, 0), fc.get(FoldRole.FOLD_VAL, 0)
            rows.append([f"fold {i} train", n_train, n_train / len(labels)])
            rows.append([f"fold {i} val", n_val, n_val / len(labels)])
    else:
        doc = io.split_to_dict(split, **meta)
    io.write_json(args.out, doc)
    sys.stdout.write(format_table(["partition", "samples", "fraction"], rows))
    return 0


# --------------------------------------------------------------------------- pool

def cmd_pool(args) -> int:
    bundle, labels, class_names = io.read_manifest(args.manifest)
    if args.labels:
        labels = io.read_labels(args.labels, bundle.class_count)

    if args.pooler_in:
        pooler = FittedPooler.from_dict(io.read_json(args.pooler_in))
    else:
        if args.pooler is None:
            raise CliError("--pooler is required unless --pooler-in is given")
        kind = PoolerKind(args.pooler)
        pooler = None
        if needs_fitting(kind):
            if not args.fit_split:
                raise CliError(f"--pooler {kind.value} needs --fit-split with an ensemble-train partition")
            if labels is None:
                raise CliError("fitting needs labels: add 'labels' to the manifest or pass --labels")
            base, _ = io.read_split(args.fit_split)
            fit_ids = [s for s in bundle.sample_ids if base.assignment.get(s) == Partition.ENSEMBLE_TRAIN]
            if not fit_ids:
                raise CliError(f"{args.fit_split}: no ensemble-train samples in this bundle")
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                pooler = fit_pooler(kind, bundle.take(fit_ids), labels.take(fit_ids))
            for w in caught:
                log.warning("%s", w.message)
            pooler_out = args.pooler_out or Path(args.out).with_name("pooler.json")
            io.write_json(pooler_out, pooler.to_dict())
        else:
            pooler = fit_pooler(kind, bundle)

    target = bundle
    if args.apply_partition != "all":
        if not args.fit_split:
            raise CliError("--apply-partition needs --fit-split")
        base, _ = io.read_split(args.fit_split)
        wanted = Partition(args.apply_partition)
        target = bundle.take([s for s in bundle.sample_ids if base.assignment.get(s) == wanted])
    pooled = pool(pooler, target)
    io.write_predictions(args.out, pooled, class_names)
    return 0


# --------------------------------------------------------------------------- evaluate

def cmd_evaluate(args) -> int:
    predictions, class_names = io.read_predictions(args.predictions)
    labels = io.read_labels(args.labels, predictions.class_count)
    labels = labels.take(predictions.sample_ids)
    report = evaluate(predictions, labels)
    doc = {"schema_version": io.SCHEMA_VERSION, "class_names": class_names, **report.to_dict()}
    _emit(io.dumps_json(doc), args.out)
    if args.roc_dir:
        roc_dir = Path(args.roc_dir)
        for c, points in enumerate(report.roc):
            if points is None:
                continue
            text = "threshold,fpr,tpr\n" + "".join(
                ",".join(io.FLOAT_FORMAT.format(v) for v in row) + "\n" for row in points
            )
            io.atomic_write_text(roc_dir / f"class_{c}_roc.csv", text)
    for message in report.errors:
        log.warning("%s", message)
    if args.table:
        rows = [[name, *(report.per_class[m][c] for m in ("accuracy", "f1", "sensitivity", "fpr", "specificity")),
                 report.auc[c]] for c, name in enumerate(class_names)]
        rows.append(["macro", *(report.macro[m] for m in ("accuracy", "f1", "sensitivity", "fpr", "specificity")),
                     report.macro_auc])
        sys.stdout.write(format_table(["class", "accuracy", "f1", "sensitivity", "fpr", "specificity", "auc"], rows))
        sys.stdout.write(f"top-1 error {report.top1_error:.4f}  top-3 error {report.top3_error:.4f}\n")
    return 0


# --------------------------------------------------------------------------- experiment

def load_config(path):
    path = Path(path)
    if path.suffix == ".toml":
        try:
            with open(path, "rb") as handle:
                return tomllib.load(handle)
        except tomllib.TOMLDecodeError as exc:
            raise io.ParseError(f"{path}: {exc}") from None
    return io.read_json(path)


def cmd_experiment(args) -> int:
    doc = load_config(args.config)
    if args.seed is not None:
        doc["seed"] = args.seed
    scenarios, dataset, config = config_from_dict(doc)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        reports = run_experiments(scenarios, dataset, config)
    out = {
        "schema_version": io.SCHEMA_VERSION,
        "config": config_to_dict(scenarios, dataset, config),
        "scenarios": [r.to_dict() for r in reports],
    }
    _emit(io.dumps_json(out), args.out)
    if args.table:
        rows = []
        for r in reports:
            gain = r.deltas.get("f1_gain_pct")
            rows.append([r.scenario.value, r.best["method"], r.best["f1"], r.best["accuracy"],
                         r.baseline_best["f1"], gain])
        sys.stdout.write(format_table(["scenario", "best method", "f1", "accuracy", "baseline f1", "f1 gain %"], rows))
    return 0


# --------------------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ensemblepool", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="partition a labels CSV into model/ensemble/testing sets")
    p.add_argument("labels")
    p.add_argument("--ratios", default="0.65,0.10,0.10,0.15",
                   help="model-train,model-val,ensemble-train,testing fractions")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stratified", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--kfold", type=int, default=None, help="also emit k cross-validation folds")
    p.add_argument("--out", default="split.json")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("pool", help="combine member predictions with a pooling function")
    p.add_argument("manifest")
    p.add_argument("--pooler", choices=[k.value for k in PoolerKind])
    p.add_argument("--pooler-in", help="apply a previously fitted pooler.json instead of fitting")
    p.add_argument("--fit-split", help="split.json whose ensemble-train partition fits the pooler")
    p.add_argument("--labels", help="labels CSV (overrides the manifest's)")
    p.add_argument("--apply-partition", default="all", choices=["all", *(q.value for q in Partition)])
    p.add_argument("--pooler-out", help="where to write the fitted pooler (default: pooler.json next to --out)")
    p.add_argument("--seed", type=int, default=0, help="accepted for interface uniformity; pooling is deterministic")
    p.add_argument("--out", default="preds.csv")
    p.set_defaults(func=cmd_pool)

    p = sub.add_parser("evaluate", help="compute the metric report for a predictions CSV")
    p.add_argument("predictions")
    p.add_argument("labels")
    p.add_argument("--out", help="report JSON path (default: stdout)")
    p.add_argument("--roc-dir", help="write class_<i>_roc.csv files here")
    p.add_argument("--table", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="run a synthetic Baseline/Augmenting/Stacking/Bagging scenario")
    p.add_argument("config", help="scenario document (.json or .toml)")
    p.add_argument("--seed", type=int, default=None, help="overrides the document's seed")
    p.add_argument("--out", help="report JSON path (default: stdout)")
    p.add_argument("--table", action="store_true")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (EnsemblePoolError, ValueError, OSError) as exc:
        print(f"ensemblepool {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
