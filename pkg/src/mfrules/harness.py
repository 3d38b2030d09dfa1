"""Cross-validated experiment protocol and report emission.

Per fold: the held-out fold is the test set, the rest is split into
train/validation, the black-box is tuned on validation accuracy and
thresholded to the training base rate, and its labels on all partitions
become surrogate targets. Every (representation, k, depth) cell is scored;
one (k, depth) per representation is then chosen by mean validation
fidelity across folds.

Seeds: every stochastic stage draws ``child_seed(master, stage, ...)``
with stage codes 10 (folds), 11 (train/val split of fold f), 12 (factorization
for fold f, representation r, k) and 13 (stability of fold f, representation r, k).
"""
from __future__ import annotations

import csv
import io
import json
import os
import platform
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import scipy

from .blackbox import DEFAULT_C_GRID, classification_metrics, predict_labels, tune_C
from .errors import ConfigError, DegenerateWarning, DomainError, NumericalError
from .evaluation import (ComparisonResult, ddmf_representation, domain_representation,
                         evaluate_explanation, fg_representation, stability_curve,
                         wilcoxon_signed_rank)
from .metafeatures import DEFAULT_K_GRID, build_ddmf, build_domain_mf, read_domain_map, top_features
from .sparse import Dataset, child_seed, load_libsvm, make_folds, read_manifest, split_rest, tfidf_transform
from .tree import complexity, extract_rules, fit_cart, impurity_reduction_ranking, predict, truncate

REPORT_VERSION = 1
REPRESENTATIONS = ("FG", "DDMF-NMF", "DDMF-SVD", "DomainMF")
_REP_CODE = {name: i for i, name in enumerate(REPRESENTATIONS)}
TIE_EPS = 1e-12


@dataclass
class ExperimentConfig:
    data: str = ""
    format: str = "libsvm"
    feature_names: str | None = None
    domain_map: str | None = None
    manifest: str | None = None
    tfidf: bool = False
    representations: tuple = ("FG", "DDMF-NMF", "DDMF-SVD")
    k_grid: tuple = DEFAULT_K_GRID
    depths: tuple = (1, 2, 3, 4, 5)
    allow_deep: bool = False
    n_folds: int = 5
    alpha: float = 0.8
    beta: float = 0.8
    C_grid: tuple = DEFAULT_C_GRID
    B: int = 10
    seed: int = 0
    output_dir: str = "out"
    selection: str = "fidelity"
    stability_all_folds: bool = False
    stability_curve: bool = True
    min_leaf: int = 1
    nmf_max_iter: int = 200
    nmf_tol: float = 1e-4
    lr_max_iter: int = 1000
    lr_tol: float = 1e-6
    n_jobs: int = 1

    def validate(self):
        unknown = [r for r in self.representations if r not in REPRESENTATIONS]
        if unknown:
            raise ConfigError(f"unknown representations {unknown}; choose from {REPRESENTATIONS}")
        if not self.representations:
            raise ConfigError("no representations selected")
        if "DomainMF" in self.representations and not self.domain_map:
            raise ConfigError("DomainMF needs a domain_map")
        if not self.k_grid or not self.depths or not self.C_grid:
            raise ConfigError("k_grid, depths and C_grid must be nonempty")
        if min(self.depths) < 1:
            raise ConfigError("depths must be >= 1")
        if max(self.depths) > 5 and not self.allow_deep:
            raise ConfigError("depths above 5 need allow_deep")
        if min(self.k_grid) < 1:
            raise ConfigError("k values must be >= 1")
        if self.n_folds < 2:
            raise ConfigError("n_folds must be >= 2")
        if not 0 < self.beta <= 1 or not 0 < self.alpha < 1:
            raise ConfigError("need 0 < alpha < 1 and 0 < beta <= 1")
        if self.B < 2:
            raise ConfigError("B must be >= 2")
        if self.selection not in ("fidelity", "f_fidel"):
            raise ConfigError("selection must be 'fidelity' or 'f_fidel'")
        return self


_LIST_FIELDS = {"representations": str, "k_grid": int, "depths": int, "C_grid": float}


def _coerce(name, raw, current_type_default):
    if name in _LIST_FIELDS:
        conv = _LIST_FIELDS[name]
        items = raw if isinstance(raw, (list, tuple)) else [p for p in str(raw).replace(",", " ").split()]
        try:
            return tuple(conv(x) for x in items)
        except ValueError:
            raise ConfigError(f"{name}: cannot parse {raw!r}")
    if isinstance(current_type_default, bool):
        if isinstance(raw, bool):
            return raw
        s = str(raw).strip().lower()
        if s in ("1", "true", "yes", "on"):
            return True
        if s in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    if isinstance(current_type_default, int):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{name}: expected an integer, got {raw!r}")
    if isinstance(current_type_default, float):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{name}: expected a number, got {raw!r}")
    return None if raw in (None, "", "none", "None") else str(raw)


def make_config(**overrides) -> ExperimentConfig:
    cfg = ExperimentConfig()
    names = {f.name for f in fields(ExperimentConfig)}
    for key, raw in overrides.items():
        if key not in names:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, _coerce(key, raw, getattr(cfg, key)))
    return cfg.validate()


def load_config(path, **overrides) -> ExperimentConfig:
    """Read a flat ``key = value`` config file; ``overrides`` win over file values."""
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key = value")
                k, v = line.split("=", 1)
                values[k.strip()] = v.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    values.update({k: v for k, v in overrides.items() if v is not None})
    return make_config(**values)


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.format != "libsvm":
        raise ConfigError(f"unsupported data format {cfg.format!r}")
    d = load_libsvm(cfg.data, feature_names=cfg.feature_names)
    if cfg.tfidf:
        d = Dataset(tfidf_transform(d.X), d.y, d.feature_names, d.instance_ids)
    return d


def _k_values(cfg, rep, n_train, m):
    if not rep.startswith("DDMF"):
        return [0]
    cap = min(n_train, m)
    return sorted({min(int(k), cap) for k in cfg.k_grid})


def _build(rep, k, X_train, seed, cfg, domain_space):
    """Returns (transform function, space or None)."""
    if rep == "FG":
        return (lambda X: X), None
    if rep == "DomainMF":
        return (lambda X: domain_space.transform(X).values), domain_space
    space = build_ddmf(X_train, k, rep.split("-")[1], seed,
                       max_iter=cfg.nmf_max_iter, tol=cfg.nmf_tol)
    return (lambda X: space.transform(X).values), space


def _fold_partitions(cfg, d, folds, f):
    rest = folds.rest_indices(f)
    test = folds.test_indices(f)
    tr, va = split_rest(d.y[rest], cfg.beta, child_seed(cfg.seed, 11, f))
    return rest[tr], rest[va], test


def _run_fold(cfg, d, domain_space, folds, f):
    """All cells of one fold. Pure function of its inputs, so it can run in a worker."""
    out = {"fold": f, "cells": [], "diagnostics": [], "rankings": {}, "trees": {}}
    warnings.simplefilter("ignore", DegenerateWarning)
    try:
        tr, va, te = _fold_partitions(cfg, d, folds, f)
        train, val = d.subset(tr), d.subset(va)
        C, clf, c_scores = tune_C(train, val, cfg.C_grid, cfg.lr_max_iter, cfg.lr_tol,
                                  seed=child_seed(cfg.seed, 11, f))
        yh = {"train": predict_labels(clf, d.X[tr]), "val": predict_labels(clf, d.X[va]),
              "test": predict_labels(clf, d.X[te])}
        bb = classification_metrics(d.y[te], yh["test"])
    except (DomainError, NumericalError, FloatingPointError, ValueError) as exc:
        out["diagnostics"].append({"fold": f, "stage": "blackbox", "error": repr(exc)})
        out["failed"] = True
        return out
    out["blackbox"] = {"fold": f, "C": C, "threshold": clf.threshold,
                       "val_accuracy_by_C": {repr(k): v for k, v in sorted(c_scores.items())},
                       "accuracy": bb.accuracy, "precision": bb.precision, "recall": bb.recall,
                       "f_score": bb.f_score, "n_test": int(len(te))}
    out["yhat_train"] = yh["train"]
    depths = sorted(cfg.depths)
    for rep in cfg.representations:
        try:
            for k in _k_values(cfg, rep, len(tr), d.m):
                seed = child_seed(cfg.seed, 12, f, _REP_CODE[rep], k)
                tf, space = _build(rep, k, d.X[tr], seed, cfg, domain_space)
                Xtr, Xva, Xte = tf(d.X[tr]), tf(d.X[va]), tf(d.X[te])
                full = fit_cart(Xtr, yh["train"], max(depths), cfg.min_leaf, rep)
                ranking = impurity_reduction_ranking(Xtr, yh["train"], 10)
                out["rankings"][(rep, k)] = [r for _, r in ranking]
                for depth in depths:
                    t = truncate(full, depth)
                    n_rules, n_ante = complexity(t)
                    if depth <= 5 and (n_rules > 32 or n_ante > 5):
                        raise NumericalError(f"complexity bound violated at depth {depth}")
                    ev_te = evaluate_explanation(d.y[te], yh["test"], predict(t, Xte), "test")
                    if len(va):
                        ev_va = evaluate_explanation(d.y[va], yh["val"], predict(t, Xva), "val")
                        v_fid, v_ff = ev_va.fidelity, ev_va.f_fidel
                    else:
                        ev_tr = evaluate_explanation(d.y[tr], yh["train"], predict(t, Xtr), "train")
                        v_fid, v_ff = ev_tr.fidelity, ev_tr.f_fidel
                    out["cells"].append({
                        "representation": rep, "k": int(k), "depth": depth, "fold": f,
                        "val_fidelity": v_fid, "val_f_fidel": v_ff,
                        "test_fidelity": ev_te.fidelity, "test_f_fidel": ev_te.f_fidel,
                        "test_accuracy": ev_te.accuracy, "n_rules": n_rules,
                        "max_antecedents": n_ante,
                    })
                if f == 0:
                    out["trees"][(rep, k)] = (full, space)
        except (DomainError, NumericalError, FloatingPointError, ValueError) as exc:
            out["diagnostics"].append({"fold": f, "stage": rep, "error": repr(exc)})
            out["cells"] = [c for c in out["cells"] if not (c["representation"] == rep and c["fold"] == f)]
            out.setdefault("failed_reps", []).append(rep)
    return out


def _mean_std(vals):
    a = np.asarray(vals, dtype=np.float64)
    return {"mean": float(a.mean()), "std": float(a.std())}


def select_cell(cells, criterion: str = "fidelity", n_folds: int | None = None):
    """Pick ``(k, depth)`` maximizing the mean validation score across folds.

    Ties go to the smaller depth, then the smaller k. Cells missing folds are
    ignored when ``n_folds`` is given.
    """
    key = "val_fidelity" if criterion == "fidelity" else "val_f_fidel"
    groups = {}
    for c in cells:
        groups.setdefault((c["k"], c["depth"]), []).append(c[key])
    scored = []
    for (k, depth), vals in groups.items():
        if n_folds is not None and len(vals) != n_folds:
            continue
        scored.append((float(np.mean(vals)), depth, k))
    if not scored:
        return None
    best = max(s for s, _, _ in scored)
    near = [(depth, k, s) for s, depth, k in scored if s >= best - TIE_EPS]
    depth, k, s = min(near)
    return {"k": k, "depth": depth, "score": s}


def _cell_table(cells):
    """Mean metrics per (representation, k, depth)."""
    groups = {}
    for c in cells:
        groups.setdefault((c["representation"], c["k"], c["depth"]), []).append(c)
    rows = []
    for (rep, k, depth), cs in sorted(groups.items(), key=lambda kv: (_REP_CODE[kv[0][0]], kv[0][1], kv[0][2])):
        row = {"representation": rep, "k": k, "depth": depth, "n_folds": len(cs)}
        for m in ("val_fidelity", "val_f_fidel", "test_fidelity", "test_f_fidel", "test_accuracy"):
            row[m] = float(np.mean([c[m] for c in cs]))
        row["n_rules"] = max(c["n_rules"] for c in cs)
        row["max_antecedents"] = max(c["max_antecedents"] for c in cs)
        rows.append(row)
    return rows


@dataclass
class ExperimentReport:
    version: int = REPORT_VERSION
    config: dict = field(default_factory=dict)
    dataset: dict = field(default_factory=dict)
    blackbox: dict = field(default_factory=dict)
    cells: list = field(default_factory=list)
    curves: list = field(default_factory=list)
    selected: dict = field(default_factory=dict)
    stability: list = field(default_factory=list)
    gini: dict = field(default_factory=dict)
    rules: dict = field(default_factory=dict)
    diagnostics: list = field(default_factory=list)
    environment: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, rec: dict) -> "ExperimentReport":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in rec.items() if k in names})

    @classmethod
    def load(cls, path) -> "ExperimentReport":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _rep_builder(rep, k, cfg, domain_space):
    if rep == "FG":
        return fg_representation()
    if rep == "DomainMF":
        return domain_representation(domain_space)
    return ddmf_representation(k, rep.split("-")[1], max_iter=cfg.nmf_max_iter, tol=cfg.nmf_tol)


def _rules_for(rep, k, depth, tree_space, d):
    full, space = tree_space
    t = truncate(full, depth)
    rs = extract_rules(t)
    if space is None:
        names = d.feature_names
        text = rs.to_text(names)
        js = rs.to_json(names)
    else:
        names = list(space.names)
        used = sorted({f for r in rs.rules for f, _, _ in r.antecedents})
        ann = {j: [d.feature_names[i] for i, _ in top_features(space, j, 5)] for j in used}
        text = rs.to_text(names)
        if ann:
            text += "".join(f"# {names[j]}: {', '.join(ann[j])}\n" for j in used)
        js = rs.to_json(names, ann)
    return {"k": k, "depth": depth, "text": text, "json": js}


def run_experiment(cfg: ExperimentConfig, dataset: Dataset | None = None) -> ExperimentReport:
    cfg.validate()
    d = dataset if dataset is not None else load_dataset(cfg)
    if d.n < cfg.n_folds:
        raise DomainError(f"{d.n} instances for {cfg.n_folds} folds")
    domain_space = None
    if "DomainMF" in cfg.representations:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateWarning)
            domain_space = build_domain_mf(read_domain_map(cfg.domain_map), d.feature_names)
    folds = make_folds(d, cfg.n_folds, child_seed(cfg.seed, 10))
    args = [(cfg, d, domain_space, folds, f) for f in range(cfg.n_folds)]
    if cfg.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.n_jobs) as ex:
            results = list(ex.map(_run_fold, *zip(*args)))
    else:
        with warnings.catch_warnings():
            results = [_run_fold(*a) for a in args]
    results.sort(key=lambda r: r["fold"])

    report = ExperimentReport()
    report.config = {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()}
    report.dataset = {"n": d.n, "m": d.m, "positive_rate": d.positive_rate,
                      "sparsity": d.sparsity, "path": cfg.data}
    if cfg.manifest:
        report.dataset["manifest"] = read_manifest(cfg.manifest)
    report.environment = {"python": platform.python_version(), "numpy": np.__version__,
                          "scipy": scipy.__version__, "seed_scheme": "SeedSequence(master, spawn_key=(stage, ...))",
                          "selection_pooling": "mean validation score across folds"}
    for r in results:
        report.diagnostics.extend(r["diagnostics"])
        report.cells.extend(r["cells"])
    bb_folds = [r["blackbox"] for r in results if "blackbox" in r]
    report.blackbox = {"folds": bb_folds}
    if bb_folds:
        for m in ("accuracy", "precision", "recall", "f_score"):
            report.blackbox[m] = _mean_std([b[m] for b in bb_folds])
    report.curves = _cell_table(report.cells)

    fold0 = results[0]
    stab_folds = range(cfg.n_folds) if cfg.stability_all_folds else [0]
    depths = sorted(cfg.depths)
    stab_table = {}
    for rep in cfg.representations:
        rep_cells = [c for c in report.cells if c["representation"] == rep]
        complete_folds = {c["fold"] for c in rep_cells}
        complete = len(complete_folds) == cfg.n_folds
        sel = select_cell(rep_cells, cfg.selection, cfg.n_folds)
        entry = {"complete": complete, "n_folds": len(complete_folds)}
        if sel is None:
            entry["error"] = "no complete cells"
            report.selected[rep] = entry
            continue
        k_sel, d_sel = sel["k"], sel["depth"]
        chosen = [c for c in rep_cells if c["k"] == k_sel and c["depth"] == d_sel]
        entry.update({"k": k_sel if rep.startswith("DDMF") else None, "depth": d_sel,
                      "validation_score": sel["score"], "criterion": cfg.selection,
                      "test": {m: _mean_std([c["test_" + m] for c in chosen])
                               for m in ("fidelity", "f_fidel", "accuracy")},
                      "n_rules": max(c["n_rules"] for c in chosen),
                      "max_antecedents": max(c["max_antecedents"] for c in chosen)})
        # stability over k values (curve) or only at the selected k
        k_list = sorted({c["k"] for c in rep_cells}) if cfg.stability_curve else [k_sel]
        for f in stab_folds:
            res = results[f]
            if "yhat_train" not in res:
                continue
            tr, _, _ = _fold_partitions(cfg, d, folds, f)
            for k in k_list:
                try:
                    curve = stability_curve(d.X[tr], res["yhat_train"], _rep_builder(rep, k, cfg, domain_space),
                                            depths, cfg.B, child_seed(cfg.seed, 13, f, _REP_CODE[rep], k),
                                            min_leaf=cfg.min_leaf, kind=rep)
                except (DomainError, NumericalError, ValueError) as exc:
                    report.diagnostics.append({"fold": f, "stage": f"stability {rep} k={k}", "error": repr(exc)})
                    continue
                for depth, sr in curve.items():
                    stab_table.setdefault((rep, k, depth), []).append(sr.mean_jaccard)
        sel_stab = stab_table.get((rep, k_sel, d_sel))
        entry["stability"] = float(np.mean(sel_stab)) if sel_stab else None
        gini_vals = [results[f]["rankings"][(rep, k_sel)] for f in range(cfg.n_folds)
                     if (rep, k_sel) in results[f]["rankings"]]
        if gini_vals:
            report.gini[rep] = {"k": k_sel, "mean_reduction_by_rank": np.mean(gini_vals, axis=0).tolist()}
        if (rep, k_sel) in fold0["trees"]:
            report.rules[rep] = _rules_for(rep, k_sel, d_sel, fold0["trees"][(rep, k_sel)], d)
        report.selected[rep] = entry
    report.stability = [{"representation": rep, "k": k, "depth": depth, "stability": float(np.mean(v)),
                         "n_folds": len(v)}
                        for (rep, k, depth), v in sorted(stab_table.items(),
                                                         key=lambda kv: (_REP_CODE[kv[0][0]], kv[0][1], kv[0][2]))]
    return report


# ---------------------------------------------------------------------------
# output

def _pct(x):
    return "n/a" if x is None else f"{100.0 * x:.2f}"


def render_table(report: ExperimentReport) -> str:
    lines = ["| Representation | k | fidelity(%) | f-fidel(%) | stability(%) | accuracy(%) | optimal depth |",
             "|---|---|---|---|---|---|---|"]
    for rep in REPRESENTATIONS:
        if rep not in report.selected:
            continue
        s = report.selected[rep]
        if "test" not in s:
            lines.append(f"| {rep} | - | incomplete | | | | |")
            continue
        t = s["test"]
        mark = "" if s["complete"] else " (incomplete)"
        lines.append(f"| {rep}{mark} | {s['k'] if s['k'] is not None else '-'} | "
                     f"{_pct(t['fidelity']['mean'])} | {_pct(t['f_fidel']['mean'])} | "
                     f"{_pct(s.get('stability'))} | {_pct(t['accuracy']['mean'])} | {s['depth']} |")
    return "\n".join(lines) + "\n"


def _csv(rows, columns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([f"{r[c]:.6f}" if isinstance(r[c], float) else r[c] for c in columns])
    return buf.getvalue()


def emit_report(report: ExperimentReport, out_dir) -> list:
    """Write report.json, table.md, curves/*.csv and rules_<rep>.txt; returns the paths."""
    try:
        os.makedirs(os.path.join(out_dir, "curves"), exist_ok=True)
    except OSError as exc:
        raise DomainError(f"cannot create output directory {out_dir}: {exc}")
    files = {"report.json": report.to_json(), "table.md": render_table(report)}
    curve_cols = ["representation", "k", "depth", "n_folds", "val_fidelity", "test_fidelity",
                  "test_f_fidel", "test_accuracy", "n_rules"]
    files[os.path.join("curves", "fidelity_vs_depth.csv")] = _csv(report.curves, curve_cols)
    by_k = sorted(report.curves, key=lambda r: (_REP_CODE[r["representation"]], r["depth"], r["k"]))
    files[os.path.join("curves", "fidelity_vs_k.csv")] = _csv(by_k, curve_cols)
    stab = sorted(report.stability, key=lambda r: (_REP_CODE[r["representation"]], r["depth"], r["k"]))
    files[os.path.join("curves", "stability_vs_k.csv")] = _csv(
        stab, ["representation", "k", "depth", "n_folds", "stability"])
    for rep, r in report.rules.items():
        files[f"rules_{rep}.txt"] = r["text"]
    written = []
    for rel, content in sorted(files.items()):
        path = os.path.join(out_dir, rel)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(content)
        written.append(path)
    return written


def compare_representations(reports, a: str = "DDMF-NMF", b: str = "FG", metric: str = "fidelity",
                            alternative: str = "greater") -> ComparisonResult:
    """Wilcoxon test on per-dataset differences ``a - b`` of a test metric, in percentage points."""
    diffs = []
    for i, rep in enumerate(reports):
        if isinstance(rep, dict):
            rep = ExperimentReport.from_dict(rep)
        for name in (a, b):
            if name not in rep.selected or "test" not in rep.selected[name]:
                raise DomainError(f"report {i} lacks representation {name!r}")
        va = rep.selected[a]["test"][metric]["mean"]
        vb = rep.selected[b]["test"][metric]["mean"]
        diffs.append(100.0 * (va - vb))
    if len(diffs) < 5:
        raise DomainError(f"need at least 5 reports, got {len(diffs)}")
    return wilcoxon_signed_rank(diffs, alternative)


def summary_report(values: dict) -> ExperimentReport:
    """A minimal report holding only selected test metrics (fractions) per representation.

    ``values`` maps representation -> {metric: fraction}; used to compare
    against published per-dataset results.
    """
    rep = ExperimentReport()
    for name, metrics in values.items():
        rep.selected[name] = {"complete": True,
                              "test": {m: {"mean": float(v), "std": 0.0} for m, v in metrics.items()}}
    return rep
