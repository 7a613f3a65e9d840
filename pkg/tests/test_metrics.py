import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from mandate.metrics import Confusion, MetricsReport, auc, f1_macro, gmean


def pairwise_auc(scores, labels):
    """Exhaustive positive/negative pair count with ties worth one half."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


labelled = st.integers(2, 30).flatmap(
    lambda n: st.tuples(
        st.lists(st.integers(0, 6).map(lambda v: v / 6), min_size=n, max_size=n),
        st.lists(st.integers(0, 1), min_size=n, max_size=n),
    )
)


def test_auc_perfect():
    assert auc([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0]) == 1.0


def test_auc_three_of_four():
    assert pairwise_auc([0.9, 0.8, 0.3, 0.1], [1, 0, 1, 0]) == 0.75
    assert auc([0.9, 0.8, 0.3, 0.1], [1, 0, 1, 0]) == 0.75


def test_auc_all_tied():
    assert auc([0.4] * 6, [1, 0, 1, 0, 0, 0]) == 0.5


def test_auc_single_class():
    with pytest.raises(ValueError):
        auc([0.1, 0.2], [1, 1])


def test_f1_examples():
    assert f1_macro([1, 0, 1], [1, 0, 1]) == 1.0
    assert math.isclose(f1_macro([1, 0, 0, 0], [1, 1, 0, 0]), (2 / 3 + 4 / 5) / 2, rel_tol=1e-15)
    assert math.isclose(f1_macro([1, 1], [1, 0]), 1 / 3, rel_tol=1e-15)


def test_f1_empty():
    with pytest.raises(ValueError):
        f1_macro([], [])


def test_gmean_examples():
    assert gmean(Confusion(tp=5, fp=0, tn=5, fn=0)) == 1.0
    assert gmean(Confusion(tp=0, fp=0, tn=5, fn=5)) == 0.0
    assert math.isclose(gmean(Confusion(tp=8, fp=1, tn=9, fn=2)), math.sqrt(0.72), rel_tol=1e-15)


def test_gmean_missing_class():
    with pytest.raises(ValueError):
        gmean(Confusion(tp=3, fp=0, tn=0, fn=1))


def test_report_perfect_and_all_benign():
    r = MetricsReport.from_scores("test", [0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
    assert (r.auc, r.f1_macro, r.gmean) == (1.0, 1.0, 1.0)
    r = MetricsReport.from_scores("test", [0.4, 0.3, 0.2, 0.1], [1, 1, 0, 0])
    assert r.gmean == 0.0 and r.tp == 0 and r.fn == 2


def test_report_empty_split():
    with pytest.raises(ValueError, match="empty"):
        MetricsReport.from_scores("val", [], [])


@given(labelled)
@settings(max_examples=200, deadline=None)
def test_auc_equals_pairwise_oracle(data):
    scores, labels = data
    assume(0 < sum(labels) < len(labels))
    assert auc(scores, labels) == pairwise_auc(scores, labels)


@given(labelled, st.sampled_from([np.exp, np.arctan, lambda x: x**3 + 2 * x, lambda x: 7 * x - 3]))
@settings(max_examples=100, deadline=None)
def test_auc_monotone_invariance(data, fn):
    scores, labels = data
    assume(0 < sum(labels) < len(labels))
    assert auc(fn(np.array(scores)), labels) == auc(scores, labels)


@given(st.integers(2, 40), st.integers(0, 2**32 - 1))
@settings(max_examples=100, deadline=None)
def test_auc_flip_complement(n, seed):
    rng = np.random.default_rng(seed)
    scores = rng.permutation(n).astype(float)  # no ties
    labels = rng.integers(0, 2, n)
    assume(0 < labels.sum() < n)
    assert math.isclose(auc(scores, labels) + auc(scores, 1 - labels), 1.0, rel_tol=1e-14)


@given(st.integers(2, 40), st.integers(0, 2**32 - 1))
@settings(max_examples=100, deadline=None)
def test_permutation_invariance(n, seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, n)
    assume(0 < labels.sum() < n)
    pred = rng.integers(0, 2, n)
    perm = rng.permutation(n)
    assert f1_macro(pred, labels) == f1_macro(pred[perm], labels[perm])
    a = Confusion.from_predictions(pred, labels)
    b = Confusion.from_predictions(pred[perm], labels[perm])
    assert a == b and gmean(a) == gmean(b) and a.total == n


@given(labelled)
@settings(max_examples=100, deadline=None)
def test_report_consistency(data):
    scores, labels = data
    assume(0 < sum(labels) < len(labels))
    r = MetricsReport.from_scores("x", scores, labels)
    c = r.confusion
    assert c.total == len(labels)
    tpr, tnr = c.tp / (c.tp + c.fn), c.tn / (c.tn + c.fp)
    assert abs(r.gmean - math.sqrt(tpr * tnr)) <= 1e-12
    for v in (r.auc, r.f1_macro, r.gmean):
        assert 0.0 <= v <= 1.0
