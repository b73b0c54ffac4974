"""Batch command-line front end.

Exit status: 0 on success, 2 on usage or configuration errors, 1 on runtime
errors.  Runtime errors print one ``error: <Type>: <message>`` line on stderr.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, jsonio
from .errors import ConfigError, SchemaConflict, UavIdsError
from .ensembles import SHORT_NAMES, ModelSpec, fit_model, load_model, save_model
from .explain import (ablation_study, gini_table, lime_explain,
                      permutation_importance, shap_summary, tree_shap)
from .figures import confusion_svg, force_svg, importance_svg, roc_svg, shap_strip_svg
from .ingest import (LABEL_COLUMN, LabelMap, SynthSpec, infer_schema, read_canonical,
                     scan_dataset, synthesize_dataset, write_canonical)
from .metrics import MetricsReport, evaluate_model
from .preprocess import (PreprocessRecipe, apply_recipe, fit_recipe, read_features,
                         stratified_indices, write_features)
from .reports import table2_csv, write_report
from .statcompare import (FoldScores, McNemarTable, compare_models, cross_validate,
                          mcnemar_csv_rows, mcnemar_from_table)

COMMANDS = ("ingest", "preprocess", "train", "evaluate", "crossval", "compare", "explain",
            "ablate", "synth", "report")
CONFIG_KEYS = {"seed", "out", "data", "synth", "models", "split", "fit_on_all",
               "adaboost_variant", "label_map", "figures", "bootstrap_iterations",
               "explain", "ablation"}
SPLIT_KEYS = {"train_fraction", "k_folds"}
EXPLAIN_KEYS = {"instances", "max_rows", "top_n", "permutation_repeats", "lime_samples"}
ABLATION_KEYS = {"importance_source", "subset_sizes", "exclusion_groups"}
DEFAULT_TRAIN_FRACTION = 0.8
DEFAULT_FOLDS = 5


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    seed: int
    out: Path
    data: str | None = None
    synth: dict | None = None
    models: list = field(default_factory=list)
    train_fraction: float = DEFAULT_TRAIN_FRACTION
    k_folds: int = DEFAULT_FOLDS
    fit_on_all: bool = False
    adaboost_variant: str | None = None
    label_map: str | None = None
    figures: bool = True
    bootstrap_iterations: int = 20000
    explain: dict = field(default_factory=dict)
    ablation: dict = field(default_factory=dict)

    def snapshot(self) -> dict:
        return {"seed": self.seed, "out": str(self.out), "data": self.data, "synth": self.synth,
                "models": [{"kind": s.kind, "params": s.params, "name": s.name} for s in self.models],
                "split": {"train_fraction": self.train_fraction, "k_folds": self.k_folds},
                "fit_on_all": self.fit_on_all, "adaboost_variant": self.adaboost_variant,
                "label_map": self.label_map, "figures": self.figures,
                "bootstrap_iterations": self.bootstrap_iterations,
                "explain": self.explain, "ablation": self.ablation}


def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected a JSON object")
    extra = sorted(set(obj) - allowed)
    if extra:
        raise ConfigError(f"{where}: unknown keys {extra}")


def _model_specs(entries, variant) -> list[ModelSpec]:
    specs = []
    for e in entries:
        if isinstance(e, str):
            e = {"kind": e}
        _check_keys(e, {"kind", "params", "name"}, "config models entry")
        params = dict(e.get("params") or {})
        spec = ModelSpec(e["kind"], params, e.get("name"))
        if spec.kind == "adaboost" and variant is not None:
            params.setdefault("variant", variant)
        specs.append(ModelSpec(spec.kind, params, spec.name))
    return specs


def load_config(args) -> RunConfig:
    raw = {}
    if args.config:
        raw = jsonio.read_json(args.config)
        _check_keys(raw, CONFIG_KEYS, str(args.config))
        split = raw.get("split") or {}
        _check_keys(split, SPLIT_KEYS, "config split")
        _check_keys(raw.get("explain") or {}, EXPLAIN_KEYS, "config explain")
        _check_keys(raw.get("ablation") or {}, ABLATION_KEYS, "config ablation")
    else:
        split = {}
    seed = args.seed if args.seed is not None else raw.get("seed")
    if seed is None:
        raise UsageError("--seed is required (or set \"seed\" in --config)")
    out = args.out or raw.get("out")
    if out is None:
        raise UsageError("--out is required (or set \"out\" in --config)")
    variant = args.adaboost_variant or raw.get("adaboost_variant")
    models = args.model or raw.get("models") or []
    return RunConfig(
        seed=int(seed), out=Path(out), data=getattr(args, "data", None) or raw.get("data"),
        synth=raw.get("synth"), models=_model_specs(models, variant),
        train_fraction=float(args.train_fraction if args.train_fraction is not None
                             else split.get("train_fraction", DEFAULT_TRAIN_FRACTION)),
        k_folds=int(args.folds if args.folds is not None else split.get("k_folds", DEFAULT_FOLDS)),
        fit_on_all=bool(args.fit_on_all or raw.get("fit_on_all", False)),
        adaboost_variant=variant, label_map=args.label_map or raw.get("label_map"),
        figures=bool(raw.get("figures", True)) and not args.no_figures,
        bootstrap_iterations=int(raw.get("bootstrap_iterations", 20000)),
        explain=dict(raw.get("explain") or {}), ablation=dict(raw.get("ablation") or {}))


# -- manifest --------------------------------------------------------------------------

def _digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    def __init__(self, command: str, cfg: RunConfig):
        self.command, self.cfg = command, cfg
        self.inputs: dict[str, str] = {}
        self.outputs: list[Path] = []
        self.warnings: list[str] = []
        self.t0 = time.perf_counter()

    def input(self, path) -> Path:
        path = Path(path)
        files = sorted(p for p in path.rglob("*") if p.is_file()) if path.is_dir() else [path]
        for f in files:
            try:
                self.inputs[str(f)] = _digest(f)
            except OSError:
                pass  # the reader reports the failure with the file name
        return path

    def path(self, name: str) -> Path:
        return self.cfg.out / name

    def wrote(self, paths):
        self.outputs.extend(paths if isinstance(paths, list) else [paths])

    def json(self, name, obj):
        self.wrote(write_report(obj, self.path(name), "json"))

    def csv(self, name, obj):
        self.wrote(write_report(obj, self.path(name), "csv"))

    def svg(self, name, text):
        if self.cfg.figures:
            self.wrote(jsonio.atomic_write_text(self.path(name), text))

    def finish(self):
        manifest = {
            "command": self.command, "version": __version__, "config": self.cfg.snapshot(),
            "inputs": self.inputs,
            "outputs": {str(p.relative_to(self.cfg.out)) if p.is_relative_to(self.cfg.out)
                        else str(p): _digest(p) for p in sorted(set(self.outputs))},
            "warnings": self.warnings, "warning_count": len(self.warnings),
            "timing_seconds": round(time.perf_counter() - self.t0, 3),
        }
        jsonio.write_json(manifest, self.path(f"manifest_{self.command}.json"))


# -- shared loaders --------------------------------------------------------------------

def _need(value, flag):
    if value is None:
        raise UsageError(f"{flag} is required")
    return value


def _load_raw(run: Run, path):
    """Canonical CSV, or a class-per-directory dataset root."""
    p = run.input(path)
    if p.is_dir():
        lm = LabelMap.from_file(run.input(run.cfg.label_map)) if run.cfg.label_map else None
        raw, lm = scan_dataset(p, lm)
        return raw, infer_schema(raw, exclude=(LABEL_COLUMN,), on_all_missing="drop"), lm
    return read_canonical(p)


def _load_features(run: Run, path):
    return read_features(run.input(path))


def _load_models(run: Run, paths):
    return [load_model(run.input(p)) for p in paths]


def _short(kind: str) -> str:
    return {v: k for k, v in SHORT_NAMES.items()}.get(kind, kind)


# -- commands --------------------------------------------------------------------------

def cmd_synth(run: Run, args):
    spec = run.cfg.synth
    if args.spec:
        spec = jsonio.read_json(run.input(args.spec))
    if spec is None:
        raise UsageError("synth needs --spec PATH or a \"synth\" object in --config")
    raw, lm = synthesize_dataset(SynthSpec.from_dict(spec), run.cfg.seed)
    run.wrote(write_canonical(raw, lm, run.path("dataset.csv")))
    run.wrote(run.path("dataset.csv.json"))


def cmd_ingest(run: Run, args):
    raw, schema, lm = _load_raw(run, _need(run.cfg.data, "--data"))
    run.wrote(write_canonical(raw, lm, run.path("dataset.csv"), schema))
    run.wrote(run.path("dataset.csv.json"))


def cmd_preprocess(run: Run, args):
    raw, schema, lm = _load_raw(run, _need(run.cfg.data, "--data"))
    y = lm.encode(raw[LABEL_COLUMN])
    tr, te = stratified_indices(y, run.cfg.train_fraction, run.cfg.seed, lm)
    fit_rows = raw if run.cfg.fit_on_all else raw.take(tr)
    recipe = fit_recipe(fit_rows, schema, LABEL_COLUMN, lm)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        train, test = apply_recipe(recipe, raw.take(tr)), apply_recipe(recipe, raw.take(te))
    run.warnings.extend(str(w.message) for w in caught)
    run.json("recipe.json", recipe)
    for name, t in (("train.csv", train), ("test.csv", test)):
        run.wrote([write_features(t, run.path(name)), run.path(name + ".json")])


def cmd_train(run: Run, args):
    if not run.cfg.models:
        raise UsageError("train needs at least one --model")
    train = _load_features(run, _need(run.cfg.data, "--data"))
    for spec in run.cfg.models:
        m = fit_model(spec, train, seed=run.cfg.seed)
        run.wrote(save_model(m, run.path(f"models/{_short(m.kind)}.json")))


def _evaluate_models(run: Run, models, test) -> list[MetricsReport]:
    reports = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        for m in models:
            rep = evaluate_model(m, test)
            short = _short(m.kind)
            reports.append(rep)
            run.json(f"metrics_{short}.json", rep)
            run.wrote(table2_csv(rep, run.path(f"table2_{short}.csv")))
            gini = gini_table(m)
            run.csv(f"table3_{short}.csv", gini)
            names = list(rep.class_names)
            run.svg(f"confusion_{short}.svg", confusion_svg(rep.confusion, names,
                                                            f"Confusion matrix: {rep.model_name}"))
            run.svg(f"roc_{short}.svg", roc_svg(rep.roc_curves, rep.roc_auc_per_class, names,
                                                f"ROC curves: {rep.model_name}"))
            run.svg(f"importance_{short}.svg",
                    importance_svg([(r.feature, r.mean) for r in gini.rows],
                                   f"Top features (Gini): {rep.model_name}"))
    run.warnings.extend(str(w.message) for w in caught)
    run.csv("table1.csv", reports)
    return reports


def cmd_evaluate(run: Run, args):
    if not args.models:
        raise UsageError("evaluate needs --models FILE [FILE ...]")
    test = _load_features(run, _need(run.cfg.data, "--data"))
    _evaluate_models(run, _load_models(run, args.models), test)


def cmd_crossval(run: Run, args):
    if not run.cfg.models:
        raise UsageError("crossval needs at least one --model")
    path = _need(run.cfg.data, "--data")
    p = Path(path)
    if p.is_dir() or p.with_name(p.name + ".json").exists() and \
            jsonio.read_json(p.with_name(p.name + ".json")).get("kind") == "raw":
        raw, _, _ = _load_raw(run, path)
        data = raw
    else:
        data = _load_features(run, path)
    fs = cross_validate(run.cfg.models, data, run.cfg.k_folds, args.metric, run.cfg.seed)
    run.json("fold_scores.json", fs)
    run.csv("fold_scores.csv", fs)


def read_contingency(path) -> McNemarTable:
    """2x2 counts from a CSV; header row and row labels are optional."""
    try:
        with open(path, newline="", encoding="utf-8-sig") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise UavIdsError(f"{path}: {exc.strerror or exc}") from None
    counts = []
    for r in rows:
        nums = []
        for c in r:
            try:
                nums.append(int(c.replace(",", "").strip()))
            except ValueError:
                continue
        if nums:
            counts.append(nums)
    if len(counts) != 2 or any(len(c) != 2 for c in counts) or min(min(c) for c in counts) < 0:
        raise SchemaConflict(f"{path}: expected a 2x2 table of nonnegative counts")
    return McNemarTable(counts[0][0], counts[0][1], counts[1][0], counts[1][1])


def cmd_compare(run: Run, args):
    if args.contingency:
        res = mcnemar_from_table(read_contingency(run.input(args.contingency)))
        pair = ("A", "B")
        run.json("mcnemar.json", {"table": res.table.as_matrix(), "chi2": res.statistic,
                                  "p": res.pvalue})
        t9, t10 = mcnemar_csv_rows(res, pair)
        run.wrote(jsonio.write_csv(t9[0], t9[1:], run.path("table9.csv")))
        run.wrote(jsonio.write_csv(t10[0], t10[1:], run.path("table10.csv")))
        return
    fs = FoldScores.from_json(jsonio.read_json(run.input(_need(args.scores, "--scores"))))
    holdout = y = None
    if args.models:
        test = _load_features(run, _need(run.cfg.data, "--data"))
        models = _load_models(run, args.models)
        from .ensembles import DISPLAY_NAMES
        holdout = {}
        for m in models:
            name = next((n for n in fs.models if n in (DISPLAY_NAMES.get(m.kind), _short(m.kind))),
                        DISPLAY_NAMES.get(m.kind, m.kind))
            holdout[name] = m.predict(test.X)
        y = test.y
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rep = compare_models(fs, args.reference, holdout, y, run.cfg.bootstrap_iterations,
                             seed=run.cfg.seed)
    run.warnings.extend(str(w.message) for w in caught)
    run.json("comparison.json", rep)
    run.csv("table7.csv", rep)


def cmd_explain(run: Run, args):
    if not args.models:
        raise UsageError("explain needs --models FILE")
    t = _load_features(run, _need(run.cfg.data, "--data"))
    ex = run.cfg.explain
    instances = args.instance if args.instance else ex.get("instances", [0])
    top_n = int(ex.get("top_n", 10))
    recipe = PreprocessRecipe.from_json(jsonio.read_json(run.input(args.recipe))) \
        if args.recipe else None
    for m in _load_models(run, args.models):
        short = _short(m.kind)
        perm = permutation_importance(m, t, "accuracy", int(ex.get("permutation_repeats", 10)),
                                      run.cfg.seed)
        run.json(f"permutation_{short}.json", perm)
        run.csv(f"table4_{short}.csv", perm)
        run.svg(f"permutation_{short}.svg",
                importance_svg([(r.feature, r.mean, r.std) for r in perm.rows],
                               "Top features (permutation)", top_n, errors=True))
        attrs = []
        for i in instances:
            if not 0 <= int(i) < t.n:
                raise UsageError(f"--instance {i} outside 0..{t.n - 1}")
            a = tree_shap(m, t.X[int(i)], int(i))
            attrs.append(a)
            k = int(np.argmax(a.output))
            run.svg(f"force_{short}_{i}.svg", force_svg(a, k, m.label_map.names[k], top_n))
        run.json(f"shap_local_{short}.json", attrs)
        run.csv(f"shap_local_{short}.csv", attrs)
        from .explain import explain_rows
        rows = np.arange(t.n)
        cap = int(ex.get("max_rows", 200))
        if t.n > cap:
            rows = np.sort(np.random.default_rng(run.cfg.seed).choice(t.n, cap, replace=False))
        phis = explain_rows(m, t.X, rows)
        summaries = []
        sub = t.take(rows)
        for k in range(m.K):
            s = shap_summary(m, sub, k, top_n, phis=phis)
            summaries.append(s)
            run.svg(f"shap_{short}_class{k}.svg", shap_strip_svg(s))
        run.json(f"shap_summary_{short}.json", summaries)
        lime = [lime_explain(m, t.X[int(i)], recipe, int(ex.get("lime_samples", 5000)),
                             top_k=top_n, seed=run.cfg.seed, feature_names=t.feature_names)
                for i in instances]
        run.json(f"lime_{short}.json", {str(i): [e.to_json() for e in exps]
                                        for i, exps in zip(instances, lime)})


def _parse_groups(items) -> dict:
    groups = {}
    for it in items or []:
        if "=" not in it:
            raise UsageError(f"--exclude expects NAME=PATTERN[,PATTERN], got {it!r}")
        name, pats = it.split("=", 1)
        groups[name] = [p for p in pats.split(",") if p]
    return groups


def cmd_ablate(run: Run, args):
    if len(run.cfg.models) != 1:
        raise UsageError("ablate needs exactly one --model")
    t = _load_features(run, _need(run.cfg.data, "--data"))
    ab = run.cfg.ablation
    groups = _parse_groups(args.exclude) or ab.get("exclusion_groups", {})
    sizes = args.subset_sizes or ab.get("subset_sizes", [5, 10, 15])
    source = args.importance_source or ab.get("importance_source", "gini")
    rep = ablation_study(run.cfg.models[0], t, source, sizes, groups, run.cfg.seed,
                         run.cfg.k_folds)
    run.json("ablation.json", rep)
    run.csv("ablation.csv", rep)


def cmd_report(run: Run, args):
    """Re-render figures and tables from JSON results in ``--inputs``."""
    src = Path(_need(args.inputs, "--inputs"))
    if not src.is_dir():
        raise UsageError(f"--inputs {src} is not a directory")
    reports = []
    for p in sorted(src.glob("metrics_*.json")):
        rep = MetricsReport.from_json(jsonio.read_json(run.input(p)))
        reports.append(rep)
        tag = p.stem[len("metrics_"):]
        run.wrote(table2_csv(rep, run.path(f"table2_{tag}.csv")))
        names = list(rep.class_names)
        run.svg(f"confusion_{tag}.svg", confusion_svg(rep.confusion, names,
                                                      f"Confusion matrix: {rep.model_name}"))
        run.svg(f"roc_{tag}.svg", roc_svg(rep.roc_curves, rep.roc_auc_per_class, names,
                                          f"ROC curves: {rep.model_name}"))
    if reports:
        run.csv("table1.csv", reports)
    else:
        run.warnings.append("no metrics_*.json found; table1.csv skipped")
    cmp_path = src / "comparison.json"
    if cmp_path.exists():
        obj = jsonio.read_json(run.input(cmp_path))
        fs = FoldScores.from_json(obj["fold_scores"])
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            rep = compare_models(fs, obj["meta"]["reference"],
                                 alternative=obj["meta"].get("alternative", "greater"))
        run.warnings.extend(str(w.message) for w in caught)
        run.csv("table7.csv", rep)
    else:
        run.warnings.append("no comparison.json found; table7.csv skipped")
    for p in sorted(src.glob("permutation_*.json")):
        from .explain import ImportanceTable
        tab = ImportanceTable.from_json(jsonio.read_json(run.input(p)))
        tag = p.stem[len("permutation_"):]
        run.csv(f"table4_{tag}.csv", tab)
        run.svg(f"permutation_{tag}.svg",
                importance_svg([(r.feature, r.mean, r.std) for r in tab.rows],
                               "Top features (permutation)", errors=True))


HANDLERS = {"synth": cmd_synth, "ingest": cmd_ingest, "preprocess": cmd_preprocess,
            "train": cmd_train, "evaluate": cmd_evaluate, "crossval": cmd_crossval,
            "compare": cmd_compare, "explain": cmd_explain, "ablate": cmd_ablate,
            "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--seed", type=int, help="random seed (mandatory here or in config)")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--data", help="input dataset, table or feature file")
    common.add_argument("--model", action="append", choices=sorted(SHORT_NAMES),
                        help="model kind; repeatable")
    common.add_argument("--folds", type=int, help="cross-validation folds (default 5)")
    common.add_argument("--train-fraction", type=float, help="stratified train share (default 0.8)")
    common.add_argument("--fit-on-all", action="store_true",
                        help="fit the preprocessing recipe on all rows before splitting")
    common.add_argument("--adaboost-variant", choices=("paper", "samme"))
    common.add_argument("--label-map", help="JSON label map (list or name->index object)")
    common.add_argument("--no-figures", action="store_true", help="skip SVG rendering")

    p = argparse.ArgumentParser(prog="uavids", description="UAV traffic intrusion-detection toolkit")
    p.add_argument("--version", action="version", version=f"uavids {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    s.add_argument("--spec", help="JSON synth spec")
    sub.add_parser("ingest", parents=[common], help="scan a class-per-folder CSV dataset")
    sub.add_parser("preprocess", parents=[common], help="impute, scale, encode and split")
    sub.add_parser("train", parents=[common], help="fit ensembles on a feature table")
    s = sub.add_parser("evaluate", parents=[common], help="score models on a feature table")
    s.add_argument("--models", nargs="+", help="model JSON files")
    s = sub.add_parser("crossval", parents=[common], help="stratified k-fold scores")
    s.add_argument("--metric", default="f1_macro")
    s = sub.add_parser("compare", parents=[common], help="statistical model comparison")
    s.add_argument("--scores", help="fold_scores.json from crossval")
    s.add_argument("--models", nargs="+", help="model files for holdout tests")
    s.add_argument("--reference", help="reference model name (default: best mean score)")
    s.add_argument("--contingency", help="2x2 McNemar contingency CSV")
    s = sub.add_parser("explain", parents=[common], help="importance, SHAP and LIME")
    s.add_argument("--models", nargs="+", help="model JSON files")
    s.add_argument("--instance", type=int, action="append", help="row to explain; repeatable")
    s.add_argument("--recipe", help="recipe.json, marks categorical columns for LIME")
    s = sub.add_parser("ablate", parents=[common], help="feature-subset ablation")
    s.add_argument("--importance-source", choices=("gini", "permutation", "shap"))
    s.add_argument("--subset-sizes", type=int, nargs="+")
    s.add_argument("--exclude", action="append", help="NAME=PATTERN[,PATTERN]; repeatable")
    s = sub.add_parser("report", parents=[common], help="re-render tables and figures")
    s.add_argument("--inputs", help="directory holding JSON results")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    try:
        cfg = load_config(args)
        run = Run(args.command, cfg)
        HANDLERS[args.command](run, args)
        run.finish()
    except (UsageError, ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (UavIdsError, OSError, ValueError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
