import warnings
from fractions import Fraction

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from mfrules.errors import DegenerateWarning, DomainError
from mfrules.tree import (apply, best_split, complexity, extract_rules, feature_set, fit_cart,
                          gini, impurity_reduction_ranking, predict, truncate)

from _oracles import (all_raw_binary, brute_best_split, brute_ranking, column_classes,
                      dataset_from_classes)


def _same_split(got, want):
    if want is None:
        return got is None
    return (got is not None and got[0] == want[0] and Fraction(got[1]) == want[1]
            and abs(Fraction(got[2]) - want[2]) < Fraction(1, 10 ** 12))


def _same_ranking(got, want):
    return (len(got) == len(want) and all(
        g[0] == w[0] and abs(Fraction(g[1]) - w[1]) < Fraction(1, 10 ** 12)
        for g, w in zip(got, want)))


def test_gini_examples():
    assert gini((2, 2)) == 0.5
    assert gini((4, 0)) == 0.0
    assert gini((3, 1)) == 0.375
    with pytest.raises(DomainError):
        gini((0, 0))


def test_best_split_example():
    f, t, r = best_split(np.array([[0.0], [0.0], [1.0], [1.0]]), [0, 0, 1, 1])
    assert (f, t, r) == (0, 0.5, 0.5)
    assert best_split(np.ones((4, 1)), [0, 1, 0, 1]) is None


def test_best_split_raw_binary_exhaustive():
    for X, y in all_raw_binary(4, 2):
        assert _same_split(best_split(np.array(X, dtype=float), y), brute_best_split(X, y)), (X, y)


def test_best_split_column_classes_two_features():
    for s in range(1, 9):
        for P in range(s + 1):
            cls = column_classes(s, P)
            for a in cls:
                for b in cls:
                    X, y = dataset_from_classes(s, P, [a, b])
                    Xa = np.array(X, dtype=float)
                    assert _same_split(best_split(Xa, y), brute_best_split(X, y))
                    assert _same_ranking(impurity_reduction_ranking(Xa, y, 2),
                                         brute_ranking(X, y, 2))


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 8), st.integers(1, 4), st.integers(1, 3), st.integers(0, 10 ** 6))
def test_best_split_integer_values(n, m, min_leaf, seed):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 4, size=(n, m)).tolist()
    y = rng.integers(0, 2, n).tolist()
    got = best_split(sp.csr_matrix(np.array(X, dtype=float)), y, min_leaf=min_leaf)
    assert _same_split(got, brute_best_split(X, y, min_leaf))
    assert _same_ranking(impurity_reduction_ranking(np.array(X, dtype=float), y, m),
                         brute_ranking(X, y, m))


def test_threshold_never_rounds_up():
    # midpoint of two adjacent doubles rounds to the upper one; the split must still separate
    lo = 1.0
    hi = np.nextafter(lo, 2.0)
    f, t, _ = best_split(np.array([[lo], [hi]]), [0, 1])
    assert lo <= t < hi


def test_ranking_constant_feature_zero():
    X = np.array([[1, 0], [1, 1], [1, 0], [1, 1]], dtype=float)
    r = impurity_reduction_ranking(X, [0, 1, 0, 1], 2)
    assert r[0][0] == 1 and r[1] == (0, 0.0)


def _random_problem(seed, n=120, m=12):
    rng = np.random.default_rng(seed)
    X = sp.random(n, m, density=0.4, random_state=seed, format="csr")
    X.data = np.round(X.data * 4)
    X.eliminate_zeros()
    y = ((X @ rng.standard_normal(m)) > 0.5).astype(int) ^ (rng.random(n) < 0.1)
    return X, y.astype(int)


def test_pure_labels_single_leaf():
    t = fit_cart(np.random.default_rng(0).random((10, 3)), np.ones(10))
    assert t.n_leaves == 1 and feature_set(t) == set()
    assert predict(t, np.zeros((4, 3))).tolist() == [1] * 4
    rs = extract_rules(t)
    assert len(rs.rules) == 1 and rs.rules[0].antecedents == ()
    assert rs.to_text().startswith("IF TRUE THEN class=1")


def test_root_matches_ranking():
    for seed in range(10):
        X, y = _random_problem(seed)
        t = fit_cart(X, y, max_depth=1)
        top = impurity_reduction_ranking(X, y, 1)[0]
        if t.n_leaves > 1:
            assert t.feature[0] == top[0]
            assert t.gain[0] == pytest.approx(top[1], abs=1e-12)


def test_fit_empty_and_mismatch():
    with pytest.raises(DomainError):
        fit_cart(np.zeros((0, 3)), [])
    with pytest.raises(DomainError):
        fit_cart(np.zeros((3, 3)), [0, 1])


def test_memorizes_distinct_rows():
    X = np.array([[0, 0], [0, 1], [1, 0], [1, 1], [2, 1]], dtype=float)
    y = [0, 1, 1, 1, 0]
    t = fit_cart(X, y, max_depth=5)
    assert predict(t, X).tolist() == y


def _check_tree(t, X, y):
    assert t.actual_depth <= t.max_depth
    assert t.n_leaves <= 2 ** t.max_depth
    for i in np.flatnonzero(t.feature >= 0):
        parent = gini(t.counts[i])
        l, r = t.left[i], t.right[i]
        nl, nr = t.counts[l].sum(), t.counts[r].sum()
        child = (nl * gini(t.counts[l]) + nr * gini(t.counts[r])) / (nl + nr)
        assert child <= parent + 1e-12
        assert np.array_equal(t.counts[i], t.counts[l] + t.counts[r])
    rs = extract_rules(t)
    assert sum(r.coverage for r in rs.rules) == X.shape[0]
    assert all(len(r.antecedents) <= t.max_depth for r in rs.rules)
    assert len(feature_set(t)) <= int(np.sum(t.feature >= 0))
    n_rules, longest = complexity(t)
    assert n_rules == t.n_leaves and longest <= t.max_depth
    if t.max_depth <= 5:
        assert n_rules <= 32 and longest <= 5


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(0, 6))
def test_tree_invariants(seed, depth):
    X, y = _random_problem(seed, n=80, m=8)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateWarning)
        t = fit_cart(X, y, max_depth=depth)
    _check_tree(t, X, y)
    rs = extract_rules(t)
    Z = sp.random(50, 8, density=0.5, random_state=seed % 1000, format="csr")
    Z.data = np.round(Z.data * 4)
    assert np.array_equal(rs.predict(Z), predict(t, Z))
    assert np.array_equal(rs.predict(X), predict(t, X))
    hits = np.vstack([r.matches(Z) for r in rs.rules]).sum(axis=0)
    assert np.all(hits == 1)
    leaves = apply(t, X)
    assert set(leaves.tolist()) <= set(np.flatnonzero(t.feature < 0).tolist())
    for r in rs.rules:
        assert r.coverage == int(r.matches(X).sum())


def test_truncate_equals_shallow_fit():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateWarning)
        for seed in range(15):
            X, y = _random_problem(seed)
            deep = fit_cart(X, y, max_depth=5)
            for d in range(0, 5):
                assert truncate(deep, d).fingerprint() == fit_cart(X, y, max_depth=d).fingerprint()


def test_determinism_twenty_repeats():
    X, y = _random_problem(3, n=300, m=30)
    prints = {fit_cart(X, y, max_depth=5).fingerprint() for _ in range(20)}
    assert len(prints) == 1


def test_sparse_and_dense_agree():
    X, y = _random_problem(4)
    assert fit_cart(X, y).fingerprint() == fit_cart(X.toarray(), y).fingerprint()


def test_leaf_tie_flag():
    with pytest.warns(DegenerateWarning):
        t = fit_cart(np.ones((2, 1)), [0, 1])
    assert "leaf_tie" in t.flags and predict(t, np.ones((1, 1))).tolist() == [0]


def test_depth_one_two_rules():
    X, y = _random_problem(1)
    rs = extract_rules(fit_cart(X, y, max_depth=1))
    assert len(rs.rules) == 2 and all(len(r.antecedents) == 1 for r in rs.rules)


def test_root_only_feature_set():
    X = np.zeros((6, 9))
    X[:3, 7] = 1.0
    t = fit_cart(X, [1, 1, 1, 0, 0, 0])
    assert feature_set(t) == {7}


def test_bound_merging():
    # x3 <= 5 then x3 <= 2 collapses into one antecedent
    X = np.array([[0, 0, 0, v] for v in (1, 2, 3, 4, 5, 6, 7, 8)], dtype=float)
    y = [1, 1, 0, 0, 0, 0, 1, 1]
    t = fit_cart(X, y, max_depth=2)
    rules = extract_rules(t).rules
    for r in rules:
        feats = [f for f, _, _ in r.antecedents]
        rels = [(f, rel) for f, rel, _ in r.antecedents]
        assert len(rels) == len(set(rels))
        assert set(feats) == {3}
    assert any(r.antecedents == ((3, "<=", 2.5),) for r in rules)


def test_rule_text_format():
    X = np.array([[0.0], [1.0]])
    rs = extract_rules(fit_cart(X, [0, 1], max_depth=1))
    assert rs.to_text(["movie"]) == ("IF movie ≤ 0.5 THEN class=0 [1, 1.0000]\n"
                                     "IF movie > 0.5 THEN class=1 [1, 1.0000]\n")
    js = rs.to_json(["movie"], {0: ["a", "b"]})
    assert js["rules"][1]["antecedents"][0]["describes"] == ["a", "b"]


def test_apply_dimension_check():
    t = fit_cart(np.eye(3), [0, 1, 0])
    with pytest.raises(DomainError):
        apply(t, np.eye(4))
