"""Command-line interface.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import warnings

import numpy as np

from . import __version__
from .blackbox import (DEFAULT_C_GRID, classification_metrics, load_classifier, predict_labels,
                       save_classifier, tune_C)
from .errors import ConfigError, DegenerateWarning, DomainError, NumericalError
from .evaluation import evaluate_explanation, stability
from .harness import (REPRESENTATIONS, ExperimentReport, _rep_builder, compare_representations,
                      emit_report, load_config, make_config, run_experiment, summary_report)
from .metafeatures import build_ddmf, build_domain_mf, read_domain_map, save_space, top_features
from .sparse import Dataset, child_seed, load_libsvm, split_train_val_test, tfidf_transform
from .synth import write_planted
from .tree import extract_rules, fit_cart, predict

log = logging.getLogger("mfrules")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


def _floats(s):
    return [float(x) for x in s.replace(",", " ").split()]


def _load(args) -> Dataset:
    d = load_libsvm(args.data, feature_names=getattr(args, "feature_names", None))
    if getattr(args, "tfidf", False):
        d = Dataset(tfidf_transform(d.X), d.y, d.feature_names, d.instance_ids)
    return d


def _add_data_args(p):
    p.add_argument("--data", required=True, help="libsvm file")
    p.add_argument("--feature-names", help="text file with one feature name per line")
    p.add_argument("--tfidf", action="store_true", help="apply tf-idf to count data")
    p.add_argument("--alpha", type=float, default=0.8)
    p.add_argument("--beta", type=float, default=0.8)
    p.add_argument("--C-grid", default=None, help="comma-separated C values")
    p.add_argument("--seed", type=int, default=0)


def _split_and_train(args, d):
    plan = split_train_val_test(d, args.alpha, args.beta, child_seed(args.seed, 11, 0))
    train, val, test = d.subset(plan.train_idx), d.subset(plan.val_idx), d.subset(plan.test_idx)
    if getattr(args, "model", None) and os.path.exists(args.model) and args.command != "train":
        clf = load_classifier(args.model)
    else:
        grid = _floats(args.C_grid) if args.C_grid else DEFAULT_C_GRID
        _, clf, _ = tune_C(train, val, grid, seed=args.seed)
    return plan, train, val, test, clf


def cmd_synth(args):
    d, _ = write_planted(args.out, n=args.n, m=args.m, g=args.groups, seed=args.seed)
    print(f"wrote {d.n} x {d.m} planted dataset (positive rate {d.positive_rate:.3f}) to {args.out}")


def cmd_train(args):
    d = _load(args)
    plan, train, val, test, clf = _split_and_train(args, d)
    save_classifier(clf, args.model)
    rep = classification_metrics(test.y, predict_labels(clf, test.X))
    print(json.dumps({"C": clf.model.C, "threshold": clf.threshold, "n_train": train.n,
                      "n_val": val.n, "n_test": test.n, "test_accuracy": rep.accuracy,
                      "test_precision": rep.precision, "test_recall": rep.recall,
                      "test_f_score": rep.f_score}, indent=1, sort_keys=True))


def _representation(args, d, X_train, seed):
    if args.rep == "FG":
        return (lambda X: X), None, list(d.feature_names)
    if args.rep == "DomainMF":
        if not args.domain_map:
            raise ConfigError("DomainMF needs --domain-map")
        space = build_domain_mf(read_domain_map(args.domain_map), d.feature_names)
    else:
        space = build_ddmf(X_train, args.k, args.rep.split("-")[1], seed)
    return (lambda X: space.transform(X).values), space, list(space.names)


def cmd_explain(args):
    d = _load(args)
    plan, train, val, test, clf = _split_and_train(args, d)
    yh_tr, yh_te = predict_labels(clf, train.X), predict_labels(clf, test.X)
    tf, space, names = _representation(args, d, train.X, child_seed(args.seed, 12, 0))
    tree = fit_cart(tf(train.X), yh_tr, args.depth, representation_kind=args.rep)
    rs = extract_rules(tree)
    ev = evaluate_explanation(test.y, yh_te, predict(tree, tf(test.X)), "test")
    ann = None
    text = rs.to_text(names)
    if space is not None:
        used = sorted({f for r in rs.rules for f, _, _ in r.antecedents})
        ann = {j: [d.feature_names[i] for i, _ in top_features(space, j, 5)] for j in used}
        text += "".join(f"# {names[j]}: {', '.join(ann[j])}\n" for j in used)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, f"rules_{args.rep}.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    with open(os.path.join(args.out, f"rules_{args.rep}.json"), "w", encoding="utf-8") as fh:
        json.dump(rs.to_json(names, ann), fh, indent=1, sort_keys=True)
    if space is not None:
        save_space(space, os.path.join(args.out, f"space_{args.rep}.json"))
    sys.stdout.write(text)
    print(json.dumps({"test_fidelity": ev.fidelity, "test_f_fidel": ev.f_fidel,
                      "test_accuracy": ev.accuracy, "n_rules": len(rs.rules)}, sort_keys=True))


def cmd_stability(args):
    d = _load(args)
    plan, train, val, test, clf = _split_and_train(args, d)
    yh_tr = predict_labels(clf, train.X)
    domain_space = None
    if args.rep == "DomainMF":
        if not args.domain_map:
            raise ConfigError("DomainMF needs --domain-map")
        domain_space = build_domain_mf(read_domain_map(args.domain_map), d.feature_names)
    cfg = make_config(nmf_max_iter=200)
    sr = stability(train, yh_tr, _rep_builder(args.rep, args.k, cfg, domain_space), B=args.B,
                   depth=args.depth, seed=args.seed, kind=args.rep)
    print(json.dumps({"representation": args.rep, "k": args.k, "depth": args.depth, "B": sr.B,
                      "n_pairs": len(sr.pairwise_jaccards), "mean_jaccard": sr.mean_jaccard,
                      "flags": list(sr.flags)}, sort_keys=True))


_SWEEP_KEYS = ("data", "feature_names", "domain_map", "manifest", "tfidf", "representations",
               "k_grid", "depths", "n_folds", "beta", "C_grid", "B", "seed", "selection",
               "n_jobs", "allow_deep", "stability_all_folds", "stability_curve", "min_leaf",
               "nmf_max_iter", "nmf_tol")


def cmd_sweep(args):
    overrides = {k: getattr(args, k) for k in _SWEEP_KEYS if getattr(args, k, None) is not None}
    if args.out:
        overrides["output_dir"] = args.out
    cfg = load_config(args.config, **overrides) if args.config else make_config(**overrides)
    if not cfg.data:
        raise ConfigError("no dataset given (--data or data = ... in the config)")
    report = run_experiment(cfg)
    emit_report(report, cfg.output_dir)
    sys.stdout.write(open(os.path.join(cfg.output_dir, "table.md"), encoding="utf-8").read())
    if report.diagnostics:
        for diag in report.diagnostics:
            log.warning("fold %s %s: %s", diag["fold"], diag["stage"], diag["error"])


def cmd_compare(args):
    if args.pairs:
        reports = []
        with open(args.pairs, "r", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                reports.append(summary_report({args.a: {args.metric: float(row[args.a]) / 100.0},
                                               args.b: {args.metric: float(row[args.b]) / 100.0}}))
    else:
        reports = [ExperimentReport.load(p) for p in args.reports]
    res = compare_representations(reports, args.a, args.b, args.metric)
    print(json.dumps({"T": res.T_statistic, "n": res.n_effective, "w_plus": res.w_plus,
                      "w_minus": res.w_minus, "significant_at": list(res.significant_at),
                      "critical_values": {str(k): v for k, v in res.critical_values.items()},
                      "mean_difference": res.mean_difference, "std_difference": res.std_difference,
                      "differences": [round(x, 10) for x in res.per_dataset_differences]},
                     sort_keys=True))


def build_parser():
    p = argparse.ArgumentParser(prog="mfrules", description="Metafeature rule extraction for sparse-data classifiers")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate the planted-structure benchmark")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=2000)
    s.add_argument("--m", type=int, default=5000)
    s.add_argument("--groups", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train and calibrate the black-box only")
    _add_data_args(s)
    s.add_argument("--model", required=True, help="output model file")
    s.set_defaults(func=cmd_train)

    for name, func, helptext in (("explain", cmd_explain, "extract rules for one representation"),
                                 ("stability", cmd_stability, "bootstrap stability for one representation")):
        s = sub.add_parser(name, help=helptext)
        _add_data_args(s)
        s.add_argument("--rep", choices=REPRESENTATIONS, default="DDMF-NMF")
        s.add_argument("--k", type=int, default=30)
        s.add_argument("--depth", type=int, default=3)
        s.add_argument("--domain-map")
        s.add_argument("--model", help="reuse a saved black-box")
        if name == "explain":
            s.add_argument("--out", default="explain_out")
        else:
            s.add_argument("--B", type=int, default=10)
        s.set_defaults(func=func)

    s = sub.add_parser("sweep", help="run the full cross-validated protocol")
    s.add_argument("--config", help="key = value config file")
    s.add_argument("--out")
    s.add_argument("--data")
    s.add_argument("--feature-names", dest="feature_names")
    s.add_argument("--domain-map", dest="domain_map")
    s.add_argument("--manifest")
    s.add_argument("--tfidf", action="store_const", const=True, default=None)
    s.add_argument("--representations", help="comma-separated subset of " + ",".join(REPRESENTATIONS))
    s.add_argument("--k-grid", dest="k_grid")
    s.add_argument("--depths")
    s.add_argument("--n-folds", dest="n_folds", type=int)
    s.add_argument("--beta", type=float)
    s.add_argument("--C-grid", dest="C_grid")
    s.add_argument("--B", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--selection", choices=("fidelity", "f_fidel"))
    s.add_argument("--n-jobs", dest="n_jobs", type=int)
    s.add_argument("--allow-deep", dest="allow_deep", action="store_const", const=True, default=None)
    s.add_argument("--stability-all-folds", dest="stability_all_folds", action="store_const",
                   const=True, default=None)
    s.add_argument("--no-stability-curve", dest="stability_curve", action="store_const",
                   const=False, default=None)
    s.add_argument("--min-leaf", dest="min_leaf", type=int)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("compare", help="Wilcoxon signed-rank test across per-dataset reports")
    s.add_argument("reports", nargs="*", help="report.json files")
    s.add_argument("--pairs", help="CSV of paired percentages with one column per representation")
    s.add_argument("--a", default="DDMF-NMF")
    s.add_argument("--b", default="FG")
    s.add_argument("--metric", default="fidelity", choices=("fidelity", "f_fidel", "accuracy"))
    s.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore", DegenerateWarning)
    try:
        args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except (DomainError, OSError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
