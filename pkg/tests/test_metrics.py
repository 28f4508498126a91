import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from csfnet.metrics import MetricsReport, auc_trapezoid, compute_auc, evaluate_scores, format_table


def brute_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def assert_identities(r: MetricsReport, n):
    assert r.tp + r.fp + r.tn + r.fn == n
    assert r.acc == (r.tp + r.tn) / n
    if "prec" not in r.undefined:
        assert r.prec == r.tp / (r.tp + r.fp)
    if "rec" not in r.undefined:
        assert r.rec == r.tp / (r.tp + r.fn)
    if "f1" not in r.undefined:
        assert r.f1 == 2 * r.prec * r.rec / (r.prec + r.rec)


def test_hand_example():
    assert compute_auc([0.8, 0.6, 0.7, 0.2], [1, 1, 0, 0]) == 0.75
    assert brute_auc([0.8, 0.6, 0.7, 0.2], [1, 1, 0, 0]) == 0.75


def test_perfect_scores():
    r = evaluate_scores([0.9, 0.9, 0.1, 0.1, 0.1], [1, 1, 0, 0, 0])
    assert (r.acc, r.prec, r.rec, r.f1, r.auc) == (1.0, 1.0, 1.0, 1.0, 1.0)
    assert r.undefined == []


def test_all_benign_predictions():
    r = evaluate_scores([0.1, 0.2, 0.3, 0.4], [1, 0, 1, 0])
    assert r.rec == 0.0 and r.prec == 0.0
    assert "prec" in r.undefined and "rec" not in r.undefined
    assert_identities(r, 4)


def test_sentinels():
    assert compute_auc([0.3] * 6, [1, 0, 1, 0, 0, 1]) == 0.5
    assert auc_trapezoid([0.3] * 6, [1, 0, 1, 0, 0, 1]) == 0.5
    assert math.isnan(compute_auc([0.1, 0.9], [1, 1]))
    r = evaluate_scores([0.1, 0.9], [1, 1])
    assert r.auc is None and "auc" in r.undefined
    assert_identities(r, 2)


def test_threshold_is_inclusive():
    r = evaluate_scores([0.5, 0.49], [1, 0])
    assert (r.tp, r.tn) == (1, 1)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        evaluate_scores([0.1, 0.2], [1])
    with pytest.raises(ValueError):
        evaluate_scores([0.1], [2])
    with pytest.raises(ValueError):
        evaluate_scores([], [])


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10 ** 6), n=st.integers(2, 40), ties=st.booleans())
def test_auc_two_routes_agree(seed, n, ties):
    r = np.random.default_rng(seed)
    labels = r.integers(0, 2, size=n)
    labels[0], labels[1] = 0, 1
    scores = r.integers(0, 4, size=n) / 4 if ties else r.uniform(size=n)
    a = compute_auc(scores, labels)
    assert abs(a - auc_trapezoid(scores, labels)) < 1e-9
    assert abs(a - brute_auc(scores, labels)) < 1e-12
    assert_identities(evaluate_scores(scores, labels), n)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_negated_scores_complement(seed):
    r = np.random.default_rng(seed)
    labels = np.r_[0, 1, r.integers(0, 2, size=18)]
    scores = r.permutation(20) / 20.0
    assert compute_auc(scores, labels) + compute_auc(-scores, labels) == pytest.approx(1.0, abs=1e-12)


def test_report_round_trip_and_table():
    r = evaluate_scores([0.9, 0.2, 0.6], [1, 0, 0])
    assert MetricsReport.from_dict(r.to_dict()) == r
    table = format_table({"a": r, "single": evaluate_scores([0.4], [1])})
    lines = table.splitlines()
    assert lines[0].split() == ["Method", "Acc", "Prec", "F1", "AUC", "Rec"]
    assert "n/a" in lines[2]
