"""Command-line pipeline: prepare -> train -> explain -> select -> detect.

Commands compose through files in ``--out-dir``. Each invocation writes a
``<command>_manifest.json`` with the resolved configuration and digests of
every input and output.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import flows, gbt, selection, synth, treeshap
from .manifest import RunManifest, read_json, write_json
from .metrics import evaluate_labels, percent

log = logging.getLogger("lwids")

THREADS_ENV = "LWIDS_THREADS"
DATASET_MANIFEST = "dataset_manifest.json"
METHOD_ALIASES = {
    "shap-wrapper": "shap_wrapper", "chi2": "chi2", "anova": "anova_f", "anova-f": "anova_f",
    "mutual-info": "mutual_info", "mi": "mutual_info", "pearson": "pearson", "embedded": "embedded",
    "all": "all",
}


class CliError(Exception):
    pass


# -- shared helpers -----------------------------------------------------------

def _csv_list(text: str | None) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()] if text else []


def gbt_config(args) -> gbt.GbtConfig:
    return gbt.GbtConfig(
        learning_rate=args.learning_rate, max_depth=args.max_depth, num_rounds=args.rounds,
        l2_leaf_penalty=args.l2_leaf_penalty, min_child_hessian=args.min_child_hessian,
        base_probability=args.base_probability, seed=args.seed,
    )


def load_prepared(data_dir) -> tuple[flows.DatasetSplit, dict]:
    data_dir = Path(data_dir)
    mpath = data_dir / DATASET_MANIFEST
    if not mpath.is_file():
        raise CliError(f"{data_dir}: no {DATASET_MANIFEST}; run `lwids prepare` first")
    man = read_json(mpath)
    schema = flows.FeatureSchema.from_dict(man["schema"])
    maps = man.get("encoding_maps", {})
    train = flows.read_dataset_csv(data_dir / man["train_file"], schema, maps, man["dropped_row_count"])
    test = flows.read_dataset_csv(data_dir / man["test_file"], schema, maps, man["dropped_row_count"])
    split = flows.DatasetSplit(train, test, man["seed"], man["train_fraction"], man["stratified"])
    return split, man


def _feature_indices(schema: flows.FeatureSchema, names: list[str]) -> list[int]:
    by_norm = {flows.normalize_name(n): i for i, n in enumerate(schema.feature_names)}
    out = []
    for n in names:
        i = by_norm.get(flows.normalize_name(n))
        if i is None:
            raise CliError(f"unknown feature {n!r}")
        out.append(i)
    return out


def _write_table(path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _metric_record(m) -> dict:
    d = m.to_dict()
    d["rendered"] = m.render()
    return d


# -- commands -----------------------------------------------------------------

def cmd_prepare(args) -> None:
    out = Path(args.out_dir)
    opts = flows.SchemaOptions(
        label_column=args.label_column,
        identifier_columns=tuple(_csv_list(args.drop_cols)) if args.drop_cols is not None
        else flows.IDENTIFIER_COLUMNS,
        normal_labels=tuple(args.normal_label) if args.normal_label else flows.NORMAL_TAGS,
        positive_labels=tuple(args.positive_label) if args.positive_label else flows.POSITIVE_TAGS,
        strict_identifiers=args.strict_identifiers,
    )
    run = RunManifest("prepare", {**asdict(opts), "train_fraction": args.train_frac,
                                  "stratified": not args.no_stratify}, args.seed)
    run.add_input(args.csv)
    table = flows.load_csv(args.csv, opts)
    dataset = flows.preprocess(table, opts)
    split = flows.split(dataset, args.seed, args.train_frac, stratify=not args.no_stratify)
    train_path, test_path = out / "train.csv", out / "test.csv"
    flows.write_dataset_csv(split.train, train_path)
    flows.write_dataset_csv(split.test, test_path)
    counts = dataset.class_counts()
    manifest = write_json(out / DATASET_MANIFEST, {
        "source": Path(args.csv).name,
        "source_columns": len(table.columns),
        "feature_count": dataset.schema.feature_count,
        "schema": dataset.schema.to_dict(),
        "encoding_maps": dataset.encoding_maps,
        "dropped_row_count": dataset.dropped_row_count,
        "class_counts": {"normal": counts[0], "initial_compromise": counts[1]},
        "seed": split.seed,
        "train_fraction": split.train_fraction,
        "stratified": split.stratified,
        "train_file": train_path.name,
        "test_file": test_path.name,
        "train_class_counts": {"normal": split.train.class_counts()[0],
                               "initial_compromise": split.train.class_counts()[1]},
        "test_class_counts": {"normal": split.test.class_counts()[0],
                              "initial_compromise": split.test.class_counts()[1]},
    })
    for p in (train_path, test_path, manifest):
        run.add_output(p)
    run.write(out)
    print(f"prepared {dataset.row_count} rows ({counts[0]} normal, {counts[1]} initial compromise), "
          f"{dataset.schema.feature_count} features, {dataset.dropped_row_count} rows dropped", file=sys.stderr)


def cmd_train(args) -> None:
    out = Path(args.out_dir)
    split, _ = load_prepared(args.data)
    config = gbt_config(args)
    names = _csv_list(getattr(args, "features", None))
    if names:
        split = split.select(_feature_indices(split.schema, names))
    run = RunManifest("train", {"gbt": asdict(config), "features": list(split.schema.feature_names),
                                "threshold": args.threshold}, args.seed)
    run.add_input(Path(args.data) / DATASET_MANIFEST)
    model = gbt.fit(split.train, config)
    m = evaluate_labels(split.test.labels, gbt.predict_label(model, split.test.features, args.threshold))
    model_path = out / args.model_name
    gbt.save_model(model, model_path)
    metrics_path = write_json(out / "train_metrics.json", {
        "feature_count": model.feature_count, "test": _metric_record(m)})
    run.add_output(model_path)
    run.add_output(metrics_path)
    run.write(out)
    print(f"test metrics: {m.render()}", file=sys.stderr)


def cmd_explain(args) -> None:
    out = Path(args.out_dir)
    split, _ = load_prepared(args.data)
    model = gbt.load_model(args.model)
    if model.feature_names != split.schema.feature_names:
        split = split.select(_feature_indices(split.schema, list(model.feature_names)))
    run = RunManifest("explain", {"on": args.on}, args.seed)
    run.add_input(args.model)
    run.add_input(Path(args.data) / DATASET_MANIFEST)
    shap = treeshap.explain(model, selection.explain_rows(split, args.on))
    ranking = treeshap.rank_by_mean_abs(shap)
    names = model.feature_names
    values_path = _write_table(out / "shap_values.csv", names, ([repr(v) for v in row] for row in shap.values.tolist()))
    expected_path = write_json(out / "shap_expected.json",
                               {"expected_value": shap.expected_value, "sample_count": shap.sample_count,
                                "on": args.on})
    ranking_path = _write_table(out / "ranking.csv", ["feature", "mean_abs_shap"],
                                ((names[j], repr(float(ranking.scores[j]))) for j in ranking.order))
    for p in (values_path, expected_path, ranking_path):
        run.add_output(p)
    run.write(out)
    top = ", ".join(names[j] for j in ranking.order[:9])
    print(f"top features by mean |SHAP|: {top}", file=sys.stderr)


def _selection_report(results, names) -> str:
    lines = [f"{'method':<14} {'P':>5} {'R':>5} {'F1':>5}  features"]
    for r in results:
        m = r.metrics
        lines.append(f"{r.method:<14} {percent(m.precision) if m.precision_defined else 'n/a':>5} "
                     f"{percent(m.recall) if m.recall_defined else 'n/a':>5} "
                     f"{percent(m.f1) if m.f1_defined else 'n/a':>5}  "
                     + ", ".join(names[i] for i in r.selected))
    for r in results:
        if r.method == "shap_wrapper":
            lines.append("")
            lines.append(f"wrapper trace (stopping F1 {percent(r.stopping_f1)}, epsilon {r.epsilon}):")
            for s in r.trace:
                lines.append(f"  {s.size:>3} features  {s.metrics.render()}  +{names[s.feature]}")
            if r.next_check is not None:
                verdict = "improves" if r.next_check.improves else "does not improve"
                lines.append(f"  next feature {names[r.next_check.feature]} {verdict} F1 "
                             f"({r.next_check.metrics.render()})")
    return "\n".join(lines) + "\n"


def cmd_select(args) -> None:
    out = Path(args.out_dir)
    split, _ = load_prepared(args.data)
    config = gbt_config(args)
    method = METHOD_ALIASES.get(args.method)
    if method is None:
        raise CliError(f"unknown method {args.method!r}; choose from {', '.join(METHOD_ALIASES)}")
    run = RunManifest("select", {"method": method, "k": args.k, "epsilon": args.epsilon,
                                 "explain_on": args.explain_on, "mi_bins": args.mi_bins,
                                 "threshold": args.threshold, "gbt": asdict(config)}, args.seed)
    run.add_input(Path(args.data) / DATASET_MANIFEST)
    if method == "all":
        results = selection.compare_methods(split, config, args.k, args.epsilon, args.explain_on,
                                            args.threshold, args.mi_bins)
    elif method == "shap_wrapper":
        results = [selection.select_shap_forward(split, config, args.epsilon, args.explain_on, args.threshold)]
    elif method == "embedded":
        results = [selection.select_embedded(split, args.k or 4, config, args.threshold)]
    else:
        results = [selection.select_filter(split, method, args.k or 4, config, args.threshold, args.mi_bins)]
    names = split.schema.feature_names
    sel_path = write_json(out / "selection.json", {"feature_count": len(names),
                                                   "methods": [r.to_dict(names) for r in results]})
    report_path = out / "selection_report.txt"
    report_path.write_text(_selection_report(results, names), encoding="utf-8")
    run.add_output(sel_path)
    run.add_output(report_path)
    wrapper = next((r for r in results if r.method == "shap_wrapper"), None)
    if wrapper is not None:
        reduced = gbt.fit(split.train.select(wrapper.selected), config)
        reduced_path = out / "reduced_model.json"
        gbt.save_model(reduced, reduced_path)
        run.add_output(reduced_path)
    run.write(out)
    sys.stderr.write(report_path.read_text(encoding="utf-8"))


def _detect_matrix(model: gbt.GbtModel, table: flows.RawTable) -> np.ndarray:
    by_norm = {flows.normalize_name(c): i for i, c in enumerate(table.columns)}
    missing = [n for n in model.feature_names if flows.normalize_name(n) not in by_norm]
    if missing:
        raise CliError(f"input lacks model features: {', '.join(missing)}")
    X = np.empty((table.row_count, model.feature_count))
    for j, name in enumerate(model.feature_names):
        col = by_norm[flows.normalize_name(name)]
        mapping = model.encoding_maps.get(name)
        for i, row in enumerate(table.rows):
            cell = row[col].strip()
            try:
                X[i, j] = mapping[cell] if mapping is not None else float(cell)
            except (KeyError, ValueError):
                raise CliError(f"row {i + 1}: unusable value {cell!r} in column {name!r}") from None
    bad = ~np.isfinite(X).all(axis=1)
    if bad.any():
        raise CliError(f"row {int(np.argmax(bad)) + 1}: non-finite feature value")
    return X


def cmd_detect(args) -> None:
    out = Path(args.out_dir)
    model = gbt.load_model(args.model)
    run = RunManifest("detect", {"threshold": args.threshold}, args.seed)
    run.add_input(args.model)
    run.add_input(args.csv)
    table = flows.load_csv(args.csv)
    if table.row_count == 0:
        raise CliError(f"{args.csv}: no rows to score")
    X = _detect_matrix(model, table)
    proba = gbt.predict_proba(model, X)
    labels = (proba >= args.threshold).astype(int)
    det_path = _write_table(out / "detections.csv", ["row", "probability", "label"],
                            ((i + 1, repr(float(p)), int(l)) for i, (p, l) in enumerate(zip(proba, labels))))
    run.add_output(det_path)
    run.write(out)
    print(f"scored {len(proba)} rows, {int(labels.sum())} flagged", file=sys.stderr)


def _parse_informative(text: str) -> tuple[tuple[int, float], ...]:
    pairs = []
    for item in _csv_list(text):
        j, _, shift = item.partition(":")
        try:
            pairs.append((int(j), float(shift)))
        except ValueError:
            raise CliError(f"bad informative entry {item!r}; expected index:shift") from None
    return tuple(pairs)


def cmd_synth(args) -> None:
    out = Path(args.out_dir)
    if args.informative:
        names = synth.SCVIC_FEATURES if (args.names == "scvic" and args.n_features == 77) else None
        spec = synth.SynthSpec(args.n_features, _parse_informative(args.informative), args.n_normal,
                               args.n_positive, args.noise_sigma, args.seed, names, args.mode)
    else:
        spec = synth.planted_spec(args.n_features, args.planted, args.shift, args.n_normal, args.n_positive,
                                  args.seed, args.mode, scvic_names=args.names == "scvic")
    run = RunManifest("synth", {**asdict(spec), "with_identifiers": not args.no_identifiers}, args.seed)
    path = out / args.output
    synth.write_csv(synth.generate(spec), path, with_identifiers=not args.no_identifiers)
    run.add_output(path)
    run.write(out)
    print(f"wrote {path}; planted features: {', '.join(spec.names()[j] for j in spec.planted)}", file=sys.stderr)


def cmd_run_all(args) -> None:
    out = Path(args.out_dir)
    run = RunManifest("run-all", {"csv": str(args.csv)}, args.seed)
    run.add_input(args.csv)
    cmd_prepare(args)
    args.data = str(out)
    cmd_train(args)
    args.model = str(out / args.model_name)
    cmd_explain(args)
    args.method = "all"
    cmd_select(args)
    for name in ("prepare_manifest.json", "train_manifest.json", "explain_manifest.json", "select_manifest.json"):
        run.add_output(out / name)
    run.write(out)


# -- parser -------------------------------------------------------------------

def _global_parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=0, help="split / generator seed (default 0)")
    p.add_argument("--out-dir", default=".", help="directory for all outputs (default: current)")
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads (default: ${THREADS_ENV} or all cores)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _add_prepare_flags(p):
    p.add_argument("--label-column", default=flows.DEFAULT_LABEL_COLUMN)
    p.add_argument("--normal-label", action="append", help="tag of the normal class (repeatable)")
    p.add_argument("--positive-label", action="append", help="tag of the initial-compromise class (repeatable)")
    p.add_argument("--drop-cols", default=None,
                   help="comma-separated identifier columns to drop (default: Flow ID, Timestamp, endpoints)")
    p.add_argument("--strict-identifiers", action="store_true", help="fail if an identifier column is absent")
    p.add_argument("--train-frac", type=float, default=0.8)
    p.add_argument("--no-stratify", action="store_true")


def _add_gbt_flags(p):
    d = gbt.GbtConfig()
    p.add_argument("--learning-rate", type=float, default=d.learning_rate)
    p.add_argument("--max-depth", type=int, default=d.max_depth)
    p.add_argument("--rounds", type=int, default=d.num_rounds)
    p.add_argument("--l2-leaf-penalty", type=float, default=d.l2_leaf_penalty)
    p.add_argument("--min-child-hessian", type=float, default=d.min_child_hessian)
    p.add_argument("--base-probability", type=float, default=d.base_probability)
    p.add_argument("--threshold", type=float, default=0.5, help="probability cut for the positive label")


def _add_select_flags(p):
    p.add_argument("--epsilon", type=float, default=0.0, help="stop when F1 >= full-model F1 - epsilon")
    p.add_argument("--k", type=int, default=None,
                   help="features kept by baseline methods (default: 4, or the wrapper's count with --method all)")
    p.add_argument("--explain-on", choices=("train", "all"), default="train")
    p.add_argument("--mi-bins", type=int, default=32)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lwids", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    common = _global_parent()

    p = sub.add_parser("prepare", parents=[common], help="clean and split a flow CSV")
    p.add_argument("csv")
    _add_prepare_flags(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", parents=[common], help="train a boosted-tree detector")
    p.add_argument("--data", required=True, help="directory written by `prepare`")
    p.add_argument("--features", default=None, help="comma-separated feature subset")
    p.add_argument("--model-name", default="model.json")
    _add_gbt_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("explain", parents=[common], help="SHAP values and mean-|SHAP| ranking")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--on", choices=("train", "all"), default="train")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("select", parents=[common], help="feature selection and method comparison")
    p.add_argument("--data", required=True)
    p.add_argument("--method", default="shap-wrapper", help=f"one of {', '.join(METHOD_ALIASES)}")
    _add_select_flags(p)
    _add_gbt_flags(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("detect", parents=[common], help="score flows with a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("csv")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic flow CSV")
    p.add_argument("--n-features", type=int, default=77)
    p.add_argument("--informative", default=None, help="index:shift pairs, e.g. '3:6,10:6'")
    p.add_argument("--planted", type=int, default=4, help="planted feature count when --informative is absent")
    p.add_argument("--shift", type=float, default=6.0)
    p.add_argument("--n-normal", type=int, default=10_000)
    p.add_argument("--n-positive", type=int, default=150)
    p.add_argument("--noise-sigma", type=float, default=1.0)
    p.add_argument("--mode", choices=(synth.SHARED, synth.DISJOINT), default=synth.DISJOINT)
    p.add_argument("--names", choices=("scvic", "generic"), default="scvic")
    p.add_argument("--no-identifiers", action="store_true")
    p.add_argument("--output", default="synth.csv")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run-all", parents=[common], help="prepare, train, explain and compare all methods")
    p.add_argument("csv")
    p.add_argument("--model-name", default="model.json")
    p.add_argument("--on", choices=("train", "all"), default="train")
    _add_prepare_flags(p)
    _add_gbt_flags(p)
    _add_select_flags(p)
    p.set_defaults(func=cmd_run_all)
    return parser


def _set_threads(n: int | None) -> None:
    if n is None and os.environ.get(THREADS_ENV):
        n = int(os.environ[THREADS_ENV])
    if n is None:
        return
    import numba
    numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        _set_threads(args.threads)
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        args.func(args)
    except (CliError, flows.FlowDataError, gbt.GbtError, treeshap.ShapError,
            selection.SelectionError, OSError, ValueError) as exc:
        print(f"lwids {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
