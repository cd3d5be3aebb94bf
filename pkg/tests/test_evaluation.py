import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ilmrisk.evaluation import (
    auc_ci_bootstrap,
    auc_rank,
    bootstrap_aucs,
    confusion_metrics,
    curve_band,
    evaluate,
    peak_comparison,
    recovery_report,
    roc_and_auc,
)
from ilmrisk.ilm import CParams


def brute_force_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def trapezoid_area(roc):
    fpr, tpr = roc[:, 0], roc[:, 1]
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))


labelled = st.integers(2, 60).flatmap(
    lambda n: st.tuples(
        st.lists(st.integers(0, 6).map(float), min_size=n, max_size=n),
        st.lists(st.integers(0, 1), min_size=n, max_size=n),
    )
).filter(lambda t: 0 < sum(t[1]) < len(t[1]))


@given(labelled)
def test_rank_auc_equals_pair_counting(data):
    scores, labels = data
    assert auc_rank(scores, labels) == brute_force_auc(scores, labels)


@given(labelled)
def test_roc_curve_endpoints_and_area(data):
    scores, labels = data
    roc, auc = roc_and_auc(scores, labels)
    assert roc[0].tolist() == [0.0, 0.0]
    assert roc[-1].tolist() == [1.0, 1.0]
    assert np.all(np.diff(roc[:, 0]) >= 0) and np.all(np.diff(roc[:, 1]) >= 0)
    assert trapezoid_area(roc) == pytest.approx(auc, abs=1e-12)


def test_rank_auc_matches_pair_counting_on_1000_points():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 2, 1000)
    scores = np.round(rng.normal(labels * 0.7, 1.0), 1)  # plenty of ties
    assert auc_rank(scores, labels) == pytest.approx(brute_force_auc(scores, labels), abs=1e-15)


def test_perfect_and_inverted_scores():
    assert roc_and_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])[1] == 1.0
    assert roc_and_auc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1])[1] == 0.0
    assert roc_and_auc([0.5] * 4, [0, 1, 0, 1])[1] == 0.5


def test_shuffled_labels_give_chance_auc():
    rng = np.random.default_rng(1)
    scores = rng.random(20000)
    labels = rng.permutation(np.repeat([0, 1], 10000))
    assert roc_and_auc(scores, labels)[1] == pytest.approx(0.5, abs=0.02)


def test_single_class_rejected():
    with pytest.raises(ValueError, match="both classes"):
        roc_and_auc([0.1, 0.2], [1, 1])
    with pytest.raises(ValueError):
        auc_rank([0.1, 0.2], [0, 2])


def test_bootstrap_interval_brackets_auc_and_is_reproducible():
    rng = np.random.default_rng(2)
    labels = rng.integers(0, 2, 400)
    scores = rng.normal(labels, 1.0)
    auc = auc_rank(scores, labels)
    lo, hi = auc_ci_bootstrap(scores, labels, 500, np.random.default_rng(7))
    assert lo < auc < hi
    assert (lo, hi) == auc_ci_bootstrap(scores, labels, 500, np.random.default_rng(7))


def test_bootstrap_counts_match_pointwise_resampling():
    # resampling distinct-value counts equals resampling individual points
    scores = np.array([0.1, 0.4, 0.4, 0.7, 0.2, 0.9, 0.4])
    labels = np.array([0, 0, 1, 1, 0, 1, 1])
    pos, neg = scores[labels == 1], scores[labels == 0]
    rng = np.random.default_rng(3)
    point_aucs = []
    for _ in range(4000):
        p = rng.choice(pos, len(pos))
        n = rng.choice(neg, len(neg))
        point_aucs.append(brute_force_auc(np.r_[p, n], np.r_[np.ones(len(p)), np.zeros(len(n))]))
    count_aucs = bootstrap_aucs(scores, labels, 4000, np.random.default_rng(4))
    # both are 4000-draw samples of one distribution; sd of the AUC is about 0.15
    assert np.mean(count_aucs) == pytest.approx(np.mean(point_aucs), abs=0.015)
    assert np.std(count_aucs) == pytest.approx(np.std(point_aucs), abs=0.015)


def test_confusion_metrics():
    pred = [1, 1, 0, 0, 1]
    labels = [1, 0, 0, 1, 1]
    sens, spec, acc = confusion_metrics(pred, labels)
    assert sens == pytest.approx(2 / 3)
    assert spec == pytest.approx(1 / 2)
    assert acc == pytest.approx(3 / 5)


def test_evaluate_report():
    report = evaluate([0.1, 0.3, 0.6, 0.8], [0, 0, 1, 1], [0, 1, 1, 1], resamples=50, rng=np.random.default_rng(0))
    assert report.auc == 1.0
    assert report.sensitivity == 1.0 and report.specificity == 0.5
    d = report.as_dict()
    assert d["n_positive"] == 2 and d["n_negative"] == 2


def test_curve_band_is_nearest_rank():
    reps = [[float(k), 10.0 * k] for k in range(1, 21)]
    band = curve_band(reps)
    # nearest rank: ceil(0.05 * 20) = 1st, ceil(0.5 * 20) = 10th, ceil(0.95 * 20) = 19th
    assert band.p5.tolist() == [1.0, 10.0]
    assert band.median.tolist() == [10.0, 100.0]
    assert band.p95.tolist() == [19.0, 190.0]


@settings(max_examples=30)
@given(st.lists(st.lists(st.integers(0, 50), min_size=4, max_size=4), min_size=2, max_size=15), st.randoms())
def test_curve_band_values_are_order_statistics(reps, rnd):
    band = curve_band(reps)
    shuffled = list(reps)
    rnd.shuffle(shuffled)
    other = curve_band(shuffled)
    assert band.p5.tolist() == other.p5.tolist()
    assert band.p95.tolist() == other.p95.tolist()
    for day in range(4):
        column = [r[day] for r in reps]
        assert band.p5[day] in column and band.median[day] in column and band.p95[day] in column
    assert np.all(band.contains(band.median))


def test_curve_band_rejects_ragged_input():
    with pytest.raises(ValueError, match="different lengths"):
        curve_band([[1, 2], [1, 2, 3]])


def test_peak_comparison_orders_scenarios():
    report = peak_comparison({"none": [0, 5, 9, 3], "delayed:4": [0, 4, 6, 5], "instant": [1, 2, 2, 1]})
    assert report.ordering == ["instant", "delayed:4", "none"]
    assert report.peaks["none"] == (9.0, 2)
    assert report.as_dict()["peaks"]["instant"] == {"peak": 2.0, "day": 1}


def test_recovery_report_scores():
    true = CParams(0.04, 0.40, 0.40, 4.00)
    mean = CParams(0.063, 0.839, 0.603, 5.452)
    sd = CParams(0.02, 0.3, 0.2, 1.825)
    rep = recovery_report(true, mean, sd, (0.13, 0.09), (0.1, 0.1))
    assert rep["z"]["c11"] == pytest.approx(abs(4.0 - 5.452) / 1.825)
    assert round(rep["z"]["c11"], 2) == 0.80
    assert rep["ratio_abs_error"]["a0/a1"] == pytest.approx(0.03)


def test_recovery_report_set3_exception():
    rep = recovery_report(CParams(1, 1, 2, 2), CParams(0.381, 1, 2, 2), CParams(0.120, 1, 1, 1), (1, 1), (1, 1))
    assert rep["z"]["c00"] == pytest.approx(5.16, abs=0.01)


def test_recovery_report_zero_sd():
    rep = recovery_report(CParams(1, 1, 1, 1), CParams(1, 2, 1, 1), CParams(0, 0, 1, 1), (1, 1), (1, 1))
    assert rep["z"]["c00"] == 0.0
    assert rep["z"]["c01"] == math.inf
