"""Explanation quality: fidelity, f-fidel, accuracy, bootstrap stability, Wilcoxon test."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Sequence

import numpy as np

from .blackbox import classification_metrics
from .errors import DegenerateWarning, DomainError
from .metafeatures import build_ddmf, descriptor_jaccard, top_features
from .sparse import as_csr, bootstrap_sample, child_seed
from .tree import feature_set, fit_cart, truncate


def _pair(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise DomainError(f"label arrays differ in length ({a.size} vs {b.size})")
    if a.size == 0:
        raise DomainError("empty label arrays")
    return a, b


def fidelity(y_hat, y_wb) -> float:
    """Fraction of instances where the surrogate agrees with the black-box."""
    a, b = _pair(y_hat, y_wb)
    return float(np.mean(a == b))


def accuracy(y_true, y_wb) -> float:
    """Fraction of instances where the surrogate matches the ground truth."""
    a, b = _pair(y_true, y_wb)
    return float(np.mean(a == b))


def f_fidel(y_hat, y_wb) -> float:
    """F-score of the surrogate with the black-box labels taken as ground truth."""
    a, b = _pair(y_hat, y_wb)
    rep = classification_metrics(a, b)
    if "f_score_undefined" in rep.flags:
        warnings.warn("f-fidel undefined (precision + recall = 0), reported as 0",
                      DegenerateWarning)
    return rep.f_score


def jaccard(F_v, F_w) -> float:
    """``|F_v & F_w| / |F_v | F_w|``; two empty sets count as identical."""
    F_v, F_w = set(F_v), set(F_w)
    union = F_v | F_w
    if not union:
        warnings.warn("Jaccard of two empty feature sets taken as 1", DegenerateWarning)
        return 1.0
    return len(F_v & F_w) / len(union)


def explanation_jaccard_ddmf(F_v: Sequence, F_w: Sequence, top_n: int = 20, c: float = 0.5) -> float:
    """Jaccard between two sets of data-driven metafeatures from different fits.

    ``F_v`` and ``F_w`` hold one descriptor (top-feature list) per metafeature
    in each explanation. Cross pairs whose descriptor Jaccard is at least ``c``
    are matched greedily, best pair first; each matched pair counts as one
    shared element.
    """
    for d in list(F_v) + list(F_w):
        if d is None or len(d) == 0:
            raise DomainError("missing metafeature descriptor")
    if not F_v and not F_w:
        warnings.warn("Jaccard of two empty explanations taken as 1", DegenerateWarning)
        return 1.0
    cand = []
    for i, a in enumerate(F_v):
        for j, b in enumerate(F_w):
            J = descriptor_jaccard(list(a)[:top_n], list(b)[:top_n])
            if J >= c:
                cand.append((-J, i, j))
    cand.sort()
    used_v, used_w = set(), set()
    for _, i, j in cand:
        if i not in used_v and j not in used_w:
            used_v.add(i)
            used_w.add(j)
    matched = len(used_v)
    return matched / (len(F_v) + len(F_w) - matched)


@dataclass(frozen=True)
class FidelityReport:
    fidelity: float
    f_fidel: float
    accuracy: float
    n: int
    partition: str


def evaluate_explanation(y_true, y_hat, y_wb, partition: str = "test") -> FidelityReport:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateWarning)
        ff = f_fidel(y_hat, y_wb)
    return FidelityReport(fidelity(y_hat, y_wb), ff, accuracy(y_true, y_wb), len(y_hat), partition)


# ---------------------------------------------------------------------------
# stability

@dataclass(frozen=True)
class StabilityReport:
    B: int
    pairwise_jaccards: tuple
    mean_jaccard: float
    representation_kind: str
    depth: int
    top_n: int = 20
    c: float = 0.5
    feature_sets: tuple = ()
    flags: tuple = ()


def fg_representation():
    """Fine-grained features used as-is."""
    def build(X, seed):
        return X, None
    build.kind = "FG"
    return build


def ddmf_representation(k: int, method: str = "NMF", **kwargs):
    """Data-driven metafeatures refit on every sample they are given."""
    def build(X, seed):
        space = build_ddmf(X, k, method, seed, **kwargs)
        return space.transform(X).values, space
    build.kind = "DDMF"
    return build


def domain_representation(space):
    """A fixed (domain or pre-fitted) metafeature space."""
    def build(X, seed):
        return space.transform(X).values, space
    build.kind = space.kind
    return build


def _explanation_sets(trees_and_spaces, top_n):
    """Per bootstrap: feature-index set and, for DDMF, descriptors of those features."""
    out = []
    for tree, space in trees_and_spaces:
        F = sorted(feature_set(tree))
        desc = None
        if space is not None and space.kind == "DDMF":
            desc = [top_features(space, j, top_n) for j in F]
        out.append((F, desc))
    return out


def _pairwise(sets, top_n, c):
    vals = []
    any_empty = False
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateWarning)
        for (Fa, Da), (Fb, Db) in combinations(sets, 2):
            if not Fa and not Fb:
                any_empty = True
            if Da is not None and Db is not None:
                vals.append(explanation_jaccard_ddmf(Da, Db, top_n, c))
            else:
                vals.append(jaccard(Fa, Fb))
    return vals, any_empty


def stability_curve(X_train, y_hat, rep_builder: Callable, depths, B: int = 10, seed: int = 0,
                    samples=None, top_n: int = 20, c: float = 0.5, min_leaf: int = 1,
                    kind: str | None = None) -> dict:
    """Bootstrap stability of the explanations at several depth limits.

    One surrogate per bootstrap sample is grown to the deepest limit and cut
    back for the shallower ones. ``y_hat`` is the black-box label array for
    the training rows, or a callable mapping a sampled matrix to labels.
    ``samples`` overrides the bootstrap index arrays. Returns ``{depth: StabilityReport}``.
    """
    X_train = as_csr(X_train)
    n = X_train.shape[0]
    depths = sorted(set(int(d) for d in depths))
    if samples is None:
        if B < 2:
            raise DomainError("stability needs B >= 2")
        samples = [bootstrap_sample(n, child_seed(seed, 1, b)).indices for b in range(B)]
    else:
        samples = [np.asarray(s, dtype=np.int64) for s in samples]
        B = len(samples)
        if B < 2:
            raise DomainError("stability needs B >= 2")
    kind = kind or getattr(rep_builder, "kind", "FG")
    fitted = []
    for b, idx in enumerate(samples):
        Xb = X_train[idx]
        yb = y_hat(Xb) if callable(y_hat) else np.asarray(y_hat)[idx]
        features, space = rep_builder(Xb, child_seed(seed, 2, b))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateWarning)
            tree = fit_cart(features, yb, max_depth=max(depths), min_leaf=min_leaf,
                            representation_kind=kind)
        fitted.append((tree, space))
    out = {}
    for d in depths:
        sets = _explanation_sets([(truncate(t, d), s) for t, s in fitted], top_n)
        vals, any_empty = _pairwise(sets, top_n, c)
        flags = ("empty_explanations",) if any_empty else ()
        out[d] = StabilityReport(B, tuple(vals), float(np.mean(vals)), kind, d, top_n, c,
                                 tuple(tuple(F) for F, _ in sets), flags)
    return out


def stability(train, y_hat, rep_builder: Callable, B: int = 10, depth: int = 5, seed: int = 0,
              **kwargs) -> StabilityReport:
    """Mean pairwise Jaccard of explanation feature sets over ``B`` bootstrap samples.

    ``train`` is a Dataset or a training matrix.
    """
    X = train.X if hasattr(train, "X") else train
    return stability_curve(X, y_hat, rep_builder, [depth], B, seed, **kwargs)[depth]


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank

# exact one-tailed critical values (alpha=0.05, alpha=0.01): reject when T <= value
WILCOXON_CRITICAL = {
    5: (0, None), 6: (2, None), 7: (3, 0), 8: (5, 1), 9: (8, 3), 10: (10, 5),
    11: (13, 7), 12: (17, 9), 13: (21, 12), 14: (25, 15), 15: (30, 19), 16: (35, 23),
    17: (41, 27), 18: (47, 32), 19: (53, 37), 20: (60, 43), 21: (67, 49), 22: (75, 55),
    23: (83, 62), 24: (91, 69), 25: (100, 76),
}
ALPHAS = (0.05, 0.01)
_Z_ONE_TAILED = {0.05: 1.6448536269514722, 0.01: 2.3263478740408408}


@dataclass(frozen=True)
class ComparisonResult:
    per_dataset_differences: tuple
    T_statistic: float
    n_effective: int
    w_plus: float
    w_minus: float
    significant_at: tuple
    critical_values: dict
    alternative: str = "greater"
    method: str = "exact"
    mean_difference: float = float("nan")
    std_difference: float = float("nan")


def signed_ranks(differences, zero_tol: float = 1e-12):
    """Average ranks of ``|d|`` over nonzero differences; returns ``(d_nonzero, ranks)``."""
    d = np.asarray(differences, dtype=np.float64)
    d = d[np.abs(d) > zero_tol]
    a = np.round(np.abs(d), 12)
    order = np.argsort(a, kind="stable")
    ranks = np.empty(len(a))
    i = 0
    while i < len(a):
        j = i
        while j + 1 < len(a) and a[order[j + 1]] == a[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return d, ranks


def wilcoxon_signed_rank(differences, alternative: str = "greater") -> ComparisonResult:
    """One-tailed Wilcoxon signed-rank test on paired differences.

    ``T = min(W+, W-)``. Significance uses the rank sum against the
    alternative (``W-`` for ``"greater"``) and exact critical values for
    5 <= n <= 25; larger n fall back to the normal approximation.
    """
    if alternative not in ("greater", "less"):
        raise DomainError("alternative must be 'greater' or 'less'")
    raw = np.asarray(differences, dtype=np.float64)
    d, ranks = signed_ranks(raw)
    n = len(d)
    if n < 5:
        raise DomainError(f"too few nonzero differences ({n} < 5)")
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    T = min(w_plus, w_minus)
    stat = w_minus if alternative == "greater" else w_plus
    sig = []
    if n in WILCOXON_CRITICAL:
        method = "exact"
        crit = dict(zip(ALPHAS, WILCOXON_CRITICAL[n]))
        for alpha in ALPHAS:
            if crit[alpha] is not None and stat <= crit[alpha]:
                sig.append(alpha)
    else:
        method = "normal"
        mu = n * (n + 1) / 4.0
        sigma = math.sqrt(n * (n + 1) * (2 * n + 1) / 24.0)
        crit = {a: mu - z * sigma for a, z in _Z_ONE_TAILED.items()}
        sig = [a for a in ALPHAS if stat <= crit[a]]
    return ComparisonResult(tuple(float(x) for x in raw), T, n, w_plus, w_minus, tuple(sig),
                            crit, alternative, method, float(raw.mean()), float(raw.std()))
