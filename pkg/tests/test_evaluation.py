import itertools
import warnings

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from mfrules.errors import DegenerateWarning, DomainError
from mfrules.evaluation import (WILCOXON_CRITICAL, accuracy, ddmf_representation,
                                domain_representation, evaluate_explanation,
                                explanation_jaccard_ddmf, f_fidel, fg_representation, fidelity,
                                jaccard, signed_ranks, stability, stability_curve,
                                wilcoxon_signed_rank)
from mfrules.metafeatures import build_domain_mf

from _oracles import brute_f_fidel, brute_fidelity, brute_jaccard, wilcoxon_critical

FIDELITY_DIFFS = (2.86, 3.39, 0.26, 6.65, 3.09, 0.67, -0.27, 17.34, 20.46)

labels = st.lists(st.integers(0, 1), min_size=1, max_size=12)


def test_metric_examples():
    assert fidelity([1, 0, 1, 1], [1, 1, 1, 0]) == 0.5
    assert fidelity([0, 1], [1, 0]) == 0.0
    assert accuracy([0, 0, 1], [0, 1, 1]) == pytest.approx(2 / 3)
    assert f_fidel([1, 0, 1, 1], [1, 1, 1, 0]) == pytest.approx(2 / 3)
    assert f_fidel([1, 0, 1], [1, 0, 1]) == 1.0
    with pytest.warns(DegenerateWarning):
        assert f_fidel([1, 1, 0], [0, 0, 0]) == 0.0
    assert jaccard({"a", "b"}, {"b", "c"}) == pytest.approx(1 / 3)
    assert jaccard({1}, {1}) == 1.0 and jaccard({1}, {2}) == 0.0
    with pytest.warns(DegenerateWarning):
        assert jaccard(set(), set()) == 1.0


def test_metric_errors():
    with pytest.raises(DomainError):
        fidelity([1, 0], [1])
    with pytest.raises(DomainError):
        accuracy([], [])


def test_metrics_exhaustive_small():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateWarning)
        for n in range(1, 5):
            for a in itertools.product([0, 1], repeat=n):
                for b in itertools.product([0, 1], repeat=n):
                    assert fidelity(a, b) == float(brute_fidelity(a, b))
                    assert f_fidel(a, b) == pytest.approx(float(brute_f_fidel(a, b)), abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(labels, st.data())
def test_metric_properties(a, data):
    b = data.draw(st.lists(st.integers(0, 1), min_size=len(a), max_size=len(a)))
    assert fidelity(a, b) == fidelity(b, a)
    assert fidelity(a, a) == 1.0
    assert 0.0 <= fidelity(a, b) <= 1.0 and 0.0 <= accuracy(a, b) <= 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateWarning)
        assert 0.0 <= f_fidel(a, b) <= 1.0
        r = evaluate_explanation(a, b, a)
    assert r.n == len(a)


@settings(max_examples=200, deadline=None)
@given(st.sets(st.integers(0, 9)), st.sets(st.integers(0, 9)))
def test_jaccard_properties(a, b):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateWarning)
        assert jaccard(a, b) == jaccard(b, a) == float(brute_jaccard(a, b))
        assert 0.0 <= jaccard(a, b) <= 1.0


# --- DDMF explanation Jaccard ------------------------------------------------

def test_ddmf_jaccard_one_third():
    a1, a2 = list(range(0, 20)), list(range(100, 120))
    b1 = list(range(0, 15)) + list(range(200, 205))   # Jaccard with a1 = 15/25 = 0.6
    b2 = list(range(300, 320))
    assert explanation_jaccard_ddmf([a1, a2], [b1, b2]) == pytest.approx(1 / 3)


def test_ddmf_jaccard_identity_and_disjoint():
    d = [list(range(20)), list(range(20, 40))]
    assert explanation_jaccard_ddmf(d, d) == 1.0
    assert explanation_jaccard_ddmf(d, [list(range(50, 70))]) == 0.0


def test_ddmf_jaccard_missing_descriptor():
    with pytest.raises(DomainError):
        explanation_jaccard_ddmf([[1, 2], []], [[1, 2]])


def test_ddmf_jaccard_greedy_prefers_best_pair():
    a = [list(range(0, 20))]
    b = [list(range(0, 14)) + list(range(50, 56)), list(range(0, 18)) + [90, 91]]
    # both qualify; the higher-overlap pair is taken and only one match is possible
    assert explanation_jaccard_ddmf(a, b) == pytest.approx(1 / 2)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.frozensets(st.integers(0, 12), min_size=1, max_size=5), max_size=4),
       st.lists(st.frozensets(st.integers(0, 12), min_size=1, max_size=5), max_size=4))
def test_ddmf_jaccard_c1_reduces_to_exact_sets(A, B):
    A, B = list(dict.fromkeys(A)), list(dict.fromkeys(B))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateWarning)
        got = explanation_jaccard_ddmf([sorted(x) for x in A], [sorted(x) for x in B], c=1.0)
        want = float(brute_jaccard(set(A), set(B)))
    assert got == pytest.approx(want)


# --- stability ---------------------------------------------------------------

def _problem(seed=0, n=150, m=40):
    rng = np.random.default_rng(seed)
    X = sp.random(n, m, density=0.15, random_state=seed, format="csr")
    X.data[:] = 1.0
    y = ((X @ rng.standard_normal(m)) > 0).astype(int)
    return X, y


def test_stability_pairs_and_mean():
    X, y = _problem()
    rep = stability(X, y, fg_representation(), B=10, depth=3, seed=1)
    assert len(rep.pairwise_jaccards) == 45
    assert rep.mean_jaccard == pytest.approx(np.mean(rep.pairwise_jaccards))
    assert all(0.0 <= v <= 1.0 for v in rep.pairwise_jaccards)


def test_stability_identical_samples():
    X, y = _problem()
    idx = np.arange(X.shape[0])
    rep = stability(X, y, fg_representation(), depth=4, samples=[idx] * 5)
    assert rep.mean_jaccard == 1.0 and len(rep.pairwise_jaccards) == 10


def test_stability_ddmf_identical_samples():
    X, y = _problem()
    idx = np.arange(X.shape[0])
    # builder seeds differ per sample, but the dense SVD fit does not use them
    rep = stability(X, y, ddmf_representation(5, "SVD"), depth=3, samples=[idx] * 3)
    assert rep.mean_jaccard == 1.0


def test_stability_constant_blackbox():
    X, _ = _problem()
    rep = stability(X, np.zeros(X.shape[0], int), fg_representation(), B=4, depth=5)
    assert rep.mean_jaccard == 1.0 and "empty_explanations" in rep.flags


def test_stability_order_invariant():
    X, y = _problem(2)
    rng = np.random.default_rng(0)
    samples = [rng.integers(0, X.shape[0], X.shape[0]) for _ in range(5)]
    a = stability(X, y, fg_representation(), depth=3, samples=samples)
    b = stability(X, y, fg_representation(), depth=3, samples=samples[::-1])
    assert a.mean_jaccard == pytest.approx(b.mean_jaccard, abs=1e-12)


def test_stability_needs_two():
    X, y = _problem()
    with pytest.raises(DomainError):
        stability(X, y, fg_representation(), B=1)


def test_stability_curve_matches_single_depth():
    X, y = _problem(3)
    curve = stability_curve(X, y, fg_representation(), [1, 2, 3], B=4, seed=5)
    for d in (1, 2, 3):
        single = stability(X, y, fg_representation(), B=4, depth=d, seed=5)
        assert curve[d].pairwise_jaccards == single.pairwise_jaccards


def test_stability_domain_representation():
    X, y = _problem(4)
    names = [f"f{j}" for j in range(X.shape[1])]
    space = build_domain_mf({n: f"g{j % 4}" for j, n in enumerate(names)}, names)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateWarning)
        rep = stability(X, y, domain_representation(space), B=3, depth=2)
    assert rep.representation_kind == "DomainMF"
    assert all(f < 4 for fs in rep.feature_sets for f in fs)


# --- Wilcoxon ----------------------------------------------------------------

def test_wilcoxon_fidelity_differences():
    r = wilcoxon_signed_rank(FIDELITY_DIFFS)
    assert r.T_statistic == 2 and r.n_effective == 9
    assert r.critical_values[0.01] == 3
    assert 0.01 in r.significant_at and 0.05 in r.significant_at
    assert r.mean_difference == pytest.approx(6.05, abs=0.005)
    assert r.std_difference == pytest.approx(7.18, abs=0.01)


def test_wilcoxon_all_positive():
    r = wilcoxon_signed_rank([1, 2, 3, 4, 5, 6])
    assert r.T_statistic == 0 and r.w_minus == 0


def test_wilcoxon_too_few():
    with pytest.raises(DomainError, match="too few nonzero differences"):
        wilcoxon_signed_rank([0.0] * 9)
    with pytest.raises(DomainError):
        wilcoxon_signed_rank([1, 2, 0, 0, 3, 4])


def test_wilcoxon_drops_zeros_and_averages_ties():
    d, ranks = signed_ranks([0.0, 1.0, -1.0, 2.0, 3.0])
    assert d.tolist() == [1.0, -1.0, 2.0, 3.0]
    assert ranks.tolist() == [1.5, 1.5, 3.0, 4.0]


def test_wilcoxon_less_alternative():
    r = wilcoxon_signed_rank([-x for x in FIDELITY_DIFFS], alternative="less")
    assert r.T_statistic == 2 and 0.01 in r.significant_at
    assert wilcoxon_signed_rank([-x for x in FIDELITY_DIFFS]).significant_at == ()


def test_critical_table_matches_exact_null():
    for n, (c05, c01) in WILCOXON_CRITICAL.items():
        assert c05 == wilcoxon_critical(n, 0.05)
        assert c01 == wilcoxon_critical(n, 0.01)


def test_wilcoxon_normal_branch():
    r = wilcoxon_signed_rank(np.arange(1, 31, dtype=float))
    assert r.method == "normal" and r.significant_at == (0.05, 0.01)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50, allow_nan=False).filter(lambda v: abs(v) > 1e-6),
                min_size=5, max_size=25, unique=True),
       st.floats(0.1, 100))
def test_wilcoxon_scale_invariant(d, scale):
    a, b = wilcoxon_signed_rank(d), wilcoxon_signed_rank([x * scale for x in d])
    assert a.T_statistic == b.T_statistic and a.significant_at == b.significant_at
    assert a.T_statistic >= 0 and a.n_effective <= len(d)
