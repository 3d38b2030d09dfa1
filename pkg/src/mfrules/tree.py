"""CART (Gini) surrogate trees, rule export and impurity diagnostics.

Trees are grown on black-box labels over sparse fine-grained data or dense
metafeature matrices. Split search is exact: every feature and every midpoint
between consecutive distinct values is scored, with implicit zeros of sparse
columns handled as one value group.
"""
from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateWarning, DomainError

TIE_EPS = 1e-12


def gini(counts) -> float:
    """Gini impurity ``2 p (1 - p)`` of a ``(negatives, positives)`` count pair."""
    c0, c1 = counts
    if c0 < 0 or c1 < 0:
        raise DomainError("counts must be nonnegative")
    total = c0 + c1
    if total == 0:
        raise DomainError("Gini impurity of an empty node")
    p = c1 / total
    return 2.0 * p * (1.0 - p)


def _as_matrix(X):
    if sp.issparse(X):
        X = sp.csr_matrix(X, dtype=np.float64)
        X.sum_duplicates()
        X.eliminate_zeros()
        return X
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DomainError("feature matrix must be 2-D")
    return sp.csr_matrix(X)


@dataclass
class _Groups:
    """Per-feature runs of distinct values with their instance/positive counts.

    Arrays are sorted by ``(col, val)``; each ``(col, val)`` pair occurs once.
    """
    col: np.ndarray
    val: np.ndarray
    cnt: np.ndarray
    pos: np.ndarray


def _value_groups(Xs: sp.csr_matrix, ys: np.ndarray, features=None) -> _Groups:
    s = Xs.shape[0]
    row = np.repeat(np.arange(s), np.diff(Xs.indptr))
    col, val, lab = Xs.indices.astype(np.int64), Xs.data, ys[row].astype(np.int64)
    if features is not None:
        keep = np.isin(col, np.asarray(list(features), dtype=np.int64))
        col, val, lab = col[keep], val[keep], lab[keep]
    order = np.lexsort((val, col))
    col, val, lab = col[order], val[order], lab[order]
    if len(col):
        start = np.ones(len(col), dtype=bool)
        start[1:] = (col[1:] != col[:-1]) | (val[1:] != val[:-1])
        starts = np.flatnonzero(start)
        g_col, g_val = col[starts], val[starts]
        g_cnt = np.diff(np.append(starts, len(col)))
        g_pos = np.add.reduceat(lab, starts)
    else:
        g_col = g_val = np.empty(0)
        g_cnt = g_pos = np.empty(0, dtype=np.int64)
        g_col = g_col.astype(np.int64)
    # implicit zeros, one group per touched column that has any
    cols_u, first = np.unique(g_col, return_index=True)
    nz_cnt = np.add.reduceat(g_cnt, first) if len(first) else np.empty(0, dtype=np.int64)
    nz_pos = np.add.reduceat(g_pos, first) if len(first) else np.empty(0, dtype=np.int64)
    P = int(ys.sum())
    has_zero = nz_cnt < s
    z_col = cols_u[has_zero]
    z_cnt = s - nz_cnt[has_zero]
    z_pos = P - nz_pos[has_zero]
    col = np.concatenate([g_col, z_col])
    val = np.concatenate([g_val, np.zeros(len(z_col))])
    cnt = np.concatenate([g_cnt, z_cnt])
    pos = np.concatenate([g_pos, z_pos])
    order = np.lexsort((val, col))
    return _Groups(col[order], val[order], cnt[order], pos[order])


def _split_scores(g: _Groups, s: int, P: int, min_leaf: int):
    """Impurity reduction at every boundary between consecutive groups of a column.

    Returns ``(boundary_idx, reduction, threshold)`` for admissible boundaries;
    boundary ``i`` splits after group ``i``.
    """
    if len(g.col) < 2:
        return np.empty(0, dtype=np.int64), np.empty(0), np.empty(0)
    cum_cnt = np.cumsum(g.cnt)
    cum_pos = np.cumsum(g.pos)
    run_start = np.ones(len(g.col), dtype=bool)
    run_start[1:] = g.col[1:] != g.col[:-1]
    run_id = np.cumsum(run_start) - 1
    starts = np.flatnonzero(run_start)
    base_cnt = np.concatenate([[0], cum_cnt])[starts][run_id]
    base_pos = np.concatenate([[0], cum_pos])[starts][run_id]
    nl = (cum_cnt - base_cnt)[:-1]
    pl = (cum_pos - base_pos)[:-1]
    same_col = g.col[1:] == g.col[:-1]
    nr = s - nl
    pr = P - pl
    ok = same_col & (nl >= min_leaf) & (nr >= min_leaf)
    idx = np.flatnonzero(ok)
    nl, pl, nr, pr = nl[idx], pl[idx], nr[idx], pr[idx]
    parent = 2.0 * P * (s - P) / (s * s)
    child = (2.0 * pl * (nl - pl) / nl + 2.0 * pr * (nr - pr) / nr) / s
    red = parent - child
    lo, hi = g.val[idx], g.val[idx + 1]
    thr = (lo + hi) / 2.0
    thr = np.where(thr >= hi, lo, thr)
    return idx, red, thr


def _best_from_groups(g, s, P, min_leaf):
    idx, red, thr = _split_scores(g, s, P, min_leaf)
    good = red > TIE_EPS
    if not good.any():
        return None
    best = red[good].max()
    # groups are sorted by (feature, value): the first near-best boundary has the
    # lowest feature index, then the lowest threshold
    i = np.flatnonzero(good & (red >= best - TIE_EPS))[0]
    return int(g.col[idx[i]]), float(thr[i]), float(red[i])


def best_split(X, labels, candidate_features=None, min_leaf: int = 1):
    """Best Gini split as ``(feature, threshold, reduction)``, or None.

    Ties go to the lower feature index, then the lower threshold.
    """
    X = _as_matrix(X)
    y = np.asarray(labels).astype(np.int64)
    s = X.shape[0]
    if s < 2:
        return None
    g = _value_groups(X, y, candidate_features)
    return _best_from_groups(g, s, int(y.sum()), min_leaf)


def impurity_reduction_ranking(X, y_hat, top_n: int = 10):
    """Features ranked by their best single-split Gini reduction at the root."""
    X = _as_matrix(X)
    y = np.asarray(y_hat).astype(np.int64)
    s, m = X.shape
    best = np.zeros(m)
    if s >= 2:
        g = _value_groups(X, y)
        idx, red, _ = _split_scores(g, s, int(y.sum()), 1)
        if len(idx):
            np.maximum.at(best, g.col[idx], np.maximum(red, 0.0))
    best[best < TIE_EPS] = 0.0
    order = np.lexsort((np.arange(m), -best))
    # reductions within TIE_EPS of each other count as tied: lower index first
    cluster = np.cumsum(np.r_[True, -np.diff(best[order]) > TIE_EPS])
    order = order[np.lexsort((order, cluster))][:top_n]
    return [(int(j), float(best[j])) for j in order]


# ---------------------------------------------------------------------------
# trees

@dataclass(frozen=True)
class DecisionTree:
    """Array-backed binary tree; node 0 is the root and leaves have ``feature == -1``.

    Instances with ``x[feature] <= threshold`` go left.
    """
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray
    depth: np.ndarray
    gain: np.ndarray
    max_depth: int
    feature_dimension: int
    representation_kind: str = "FG"
    min_leaf: int = 1
    flags: tuple = ()

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature < 0

    @property
    def n_leaves(self) -> int:
        return int(self.is_leaf.sum())

    @property
    def actual_depth(self) -> int:
        return int(self.depth.max())

    @property
    def leaf_label(self) -> np.ndarray:
        # ties predict class 0
        return (self.counts[:, 1] > self.counts[:, 0]).astype(np.int8)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.feature, self.threshold, self.left, self.right, self.counts):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(repr((self.max_depth, self.feature_dimension, self.min_leaf)).encode())
        return h.hexdigest()


def fit_cart(X, y_hat, max_depth: int = 5, min_leaf: int = 1,
             representation_kind: str = "FG") -> DecisionTree:
    """Grow a Gini tree greedily on the black-box labels ``y_hat``.

    A node becomes a leaf at the depth limit, when pure, when no split keeps
    ``min_leaf`` instances on both sides, or when no split lowers impurity.
    """
    X = _as_matrix(X)
    y = np.asarray(y_hat).astype(np.int64)
    n, m = X.shape
    if n == 0:
        raise DomainError("cannot fit a tree on empty data")
    if len(y) != n:
        raise DomainError(f"{n} rows but {len(y)} labels")
    if max_depth < 0:
        raise DomainError("max_depth must be >= 0")
    if min_leaf < 1:
        raise DomainError("min_leaf must be >= 1")
    feature, threshold, left, right, counts, depth, gain = [], [], [], [], [], [], []

    def new_node(idx, d):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        pos = int(y[idx].sum())
        counts.append((len(idx) - pos, pos))
        depth.append(d)
        gain.append(0.0)
        return len(feature) - 1

    # nodes are numbered in preorder (left subtree first)
    stack = [(-1, None, np.arange(n), 0)]
    while stack:
        parent, side, idx, d = stack.pop()
        node = new_node(idx, d)
        if parent >= 0:
            (left if side == "L" else right)[parent] = node
        s = len(idx)
        P = counts[node][1]
        if d >= max_depth or P == 0 or P == s or s < 2 * min_leaf:
            continue
        Xs = X[idx]
        split = _best_from_groups(_value_groups(Xs, y[idx]), s, P, min_leaf)
        if split is None:
            continue
        f, t, red = split
        col = np.asarray(Xs[:, f].todense()).ravel()
        go_left = col <= t
        feature[node], threshold[node], gain[node] = f, t, red
        stack.append((node, "R", idx[~go_left], d + 1))
        stack.append((node, "L", idx[go_left], d + 1))
    counts = np.asarray(counts, dtype=np.int64)
    feature = np.asarray(feature, dtype=np.int64)
    ties = (feature < 0) & (counts[:, 0] == counts[:, 1])
    flags = ()
    if ties.any():
        flags = ("leaf_tie",)
        warnings.warn(f"{int(ties.sum())} leaf majority tie(s) predict class 0", DegenerateWarning)
    return DecisionTree(feature, np.asarray(threshold), np.asarray(left, dtype=np.int64),
                        np.asarray(right, dtype=np.int64), counts,
                        np.asarray(depth, dtype=np.int64), np.asarray(gain), int(max_depth), m,
                        representation_kind, int(min_leaf), flags)


def truncate(tree: DecisionTree, max_depth: int) -> DecisionTree:
    """The tree ``fit_cart`` would have grown with a smaller depth limit.

    Greedy growth never looks below the current node, so cutting a deeper
    tree at ``max_depth`` reproduces the shallower fit exactly.
    """
    if max_depth >= tree.max_depth:
        return tree
    keep_map = {}
    order = []

    def visit(i):
        keep_map[i] = len(order)
        order.append(i)
        if tree.feature[i] >= 0 and tree.depth[i] < max_depth:
            visit(tree.left[i])
            visit(tree.right[i])

    visit(0)
    old = np.asarray(order)
    internal = (tree.feature[old] >= 0) & (tree.depth[old] < max_depth)
    feature = np.where(internal, tree.feature[old], -1)
    left = np.array([keep_map[tree.left[i]] if f >= 0 else -1 for i, f in zip(old, feature)],
                    dtype=np.int64)
    right = np.array([keep_map[tree.right[i]] if f >= 0 else -1 for i, f in zip(old, feature)],
                     dtype=np.int64)
    counts = tree.counts[old]
    ties = (feature < 0) & (counts[:, 0] == counts[:, 1])
    return DecisionTree(feature, np.where(internal, tree.threshold[old], 0.0), left, right,
                        counts, tree.depth[old], np.where(internal, tree.gain[old], 0.0),
                        int(max_depth), tree.feature_dimension, tree.representation_kind,
                        tree.min_leaf, ("leaf_tie",) if ties.any() else ())


def apply(tree: DecisionTree, X) -> np.ndarray:
    """Leaf index reached by every row."""
    X = _as_matrix(X)
    if X.shape[1] != tree.feature_dimension:
        raise DomainError(f"tree expects {tree.feature_dimension} features, got {X.shape[1]}")
    n = X.shape[0]
    node = np.zeros(n, dtype=np.int64)
    rows = np.arange(n)
    for _ in range(tree.actual_depth):
        f = tree.feature[node]
        active = f >= 0
        if not active.any():
            break
        r = rows[active]
        vals = np.asarray(X[r, f[active]]).ravel()
        go_left = vals <= tree.threshold[node[active]]
        node[r] = np.where(go_left, tree.left[node[active]], tree.right[node[active]])
    return node


def predict(tree: DecisionTree, X) -> np.ndarray:
    return tree.leaf_label[apply(tree, X)]


def feature_set(tree: DecisionTree) -> set:
    return {int(f) for f in tree.feature if f >= 0}


def complexity(tree: DecisionTree):
    """``(number of rules, longest rule)`` of the tree's rule set."""
    rs = extract_rules(tree)
    return len(rs.rules), max((len(r.antecedents) for r in rs.rules), default=0)


# ---------------------------------------------------------------------------
# rules

@dataclass(frozen=True)
class Rule:
    antecedents: tuple
    label: int
    coverage: int
    purity: float

    def matches(self, X) -> np.ndarray:
        X = _as_matrix(X)
        ok = np.ones(X.shape[0], dtype=bool)
        for f, rel, t in self.antecedents:
            col = np.asarray(X[:, f].todense()).ravel()
            ok &= (col <= t) if rel == "<=" else (col > t)
        return ok


@dataclass(frozen=True)
class RuleSet:
    rules: tuple
    n_train: int
    feature_dimension: int
    representation_kind: str = "FG"

    def predict(self, X) -> np.ndarray:
        X = _as_matrix(X)
        hits = np.vstack([r.matches(X) for r in self.rules])
        if np.any(hits.sum(axis=0) != 1):
            raise DomainError("rules are not mutually exclusive and exhaustive")
        labels = np.array([r.label for r in self.rules], dtype=np.int8)
        return labels[np.argmax(hits, axis=0)]

    def to_text(self, feature_names=None) -> str:
        lines = []
        for r in self.rules:
            conds = " AND ".join(
                f"{_name(feature_names, f)} {'≤' if rel == '<=' else '>'} {t:.6g}"
                for f, rel, t in r.antecedents) or "TRUE"
            lines.append(f"IF {conds} THEN class={r.label} [{r.coverage}, {r.purity:.4f}]")
        return "\n".join(lines) + "\n"

    def to_json(self, feature_names=None, annotations=None) -> dict:
        """Structured form; ``annotations`` maps feature index to extra info (e.g. descriptors)."""
        out = []
        for r in self.rules:
            ants = []
            for f, rel, t in r.antecedents:
                a = {"feature": int(f), "name": _name(feature_names, f), "relation": rel,
                     "threshold": float(t)}
                if annotations and f in annotations:
                    a["describes"] = annotations[f]
                ants.append(a)
            out.append({"antecedents": ants, "label": int(r.label), "coverage": int(r.coverage),
                        "purity": float(r.purity)})
        return {"representation": self.representation_kind, "n_train": self.n_train,
                "rules": out}


def _name(feature_names, f):
    return str(feature_names[f]) if feature_names is not None else f"x{f}"


def extract_rules(tree: DecisionTree, feature_names=None) -> RuleSet:
    """One rule per leaf, with same-feature path conditions merged to the tightest bound."""
    rules = []

    def walk(i, path):
        if tree.feature[i] < 0:
            c0, c1 = tree.counts[i]
            label = int(tree.leaf_label[i])
            total = int(c0 + c1)
            purity = (c1 if label else c0) / total if total else 0.0
            rules.append(Rule(_merge(path), label, total, float(purity)))
            return
        f, t = int(tree.feature[i]), float(tree.threshold[i])
        walk(tree.left[i], path + [(f, "<=", t)])
        walk(tree.right[i], path + [(f, ">", t)])

    walk(0, [])
    return RuleSet(tuple(rules), int(tree.counts[0].sum()), tree.feature_dimension,
                   tree.representation_kind)


def _merge(path):
    bounds = {}
    for f, rel, t in path:
        key = (f, rel)
        if key not in bounds:
            bounds[key] = t
        else:
            bounds[key] = min(bounds[key], t) if rel == "<=" else max(bounds[key], t)
    return tuple((f, rel, bounds[(f, rel)]) for f, rel in bounds)


def tree_to_json(tree: DecisionTree) -> str:
    rec = {"feature": tree.feature.tolist(), "threshold": tree.threshold.tolist(),
           "left": tree.left.tolist(), "right": tree.right.tolist(),
           "counts": tree.counts.tolist(), "depth": tree.depth.tolist(),
           "gain": tree.gain.tolist(), "max_depth": tree.max_depth,
           "feature_dimension": tree.feature_dimension,
           "representation_kind": tree.representation_kind, "min_leaf": tree.min_leaf}
    return json.dumps(rec, sort_keys=True)
