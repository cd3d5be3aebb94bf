"""Classification metrics, recovery summaries and epidemic-curve comparisons."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .ilm import CParams


@dataclass
class EvalReport:
    auc: float
    auc_ci_95: tuple
    sensitivity: float
    specificity: float
    accuracy: float
    roc_points: np.ndarray = field(repr=False)
    threshold: Optional[float] = None
    n_positive: int = 0
    n_negative: int = 0

    def as_dict(self) -> dict:
        return {
            "auc": self.auc,
            "auc_ci_95": list(self.auc_ci_95),
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "accuracy": self.accuracy,
            "threshold": self.threshold,
            "n_positive": self.n_positive,
            "n_negative": self.n_negative,
        }


def _check_binary(labels) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    labels = labels.astype(bool)
    if labels.all() or not labels.any():
        raise ValueError("both classes must be present")
    return labels


def auc_rank(scores, labels) -> float:
    """Mann-Whitney AUC with midranks for ties."""
    scores = np.asarray(scores, dtype=float)
    labels = _check_binary(labels)
    n1 = int(labels.sum())
    n0 = labels.size - n1
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


def roc_and_auc(scores, labels) -> tuple[np.ndarray, float]:
    """ROC points (fpr, tpr) from (0, 0) to (1, 1), and the AUC."""
    scores = np.asarray(scores, dtype=float)
    labels = _check_binary(labels)
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    # one ROC point per distinct threshold
    last = np.flatnonzero(np.diff(s) != 0)
    cut = np.append(last, s.size - 1)
    tp = np.cumsum(y)[cut]
    fp = (cut + 1) - tp
    tpr = np.concatenate([[0.0], tp / y.sum()])
    fpr = np.concatenate([[0.0], fp / (~y).sum()])
    return np.column_stack([fpr, tpr]), auc_rank(scores, labels)


def _weighted_auc(pos_counts: np.ndarray, neg_counts: np.ndarray) -> float:
    # counts per distinct score value, ascending
    neg_below = np.cumsum(neg_counts) - neg_counts
    wins = pos_counts @ (neg_below + 0.5 * neg_counts)
    return float(wins / (pos_counts.sum() * neg_counts.sum()))


def bootstrap_aucs(
    scores, labels, resamples: int = 1000, rng: Optional[np.random.Generator] = None
) -> np.ndarray:
    """AUCs of stratified bootstrap resamples.

    Positives and negatives are resampled separately with replacement, so no
    resample can lose a class.  Resampling is done on counts of distinct
    score values, which is equivalent to resampling the points.
    """
    rng = np.random.default_rng() if rng is None else rng
    scores = np.asarray(scores, dtype=float)
    labels = _check_binary(labels)
    values, inverse = np.unique(scores, return_inverse=True)
    pos = np.bincount(inverse[labels], minlength=values.size)
    neg = np.bincount(inverse[~labels], minlength=values.size)
    n1, n0 = int(pos.sum()), int(neg.sum())
    aucs = np.empty(resamples)
    for b in range(resamples):
        aucs[b] = _weighted_auc(rng.multinomial(n1, pos / n1), rng.multinomial(n0, neg / n0))
    return aucs


def auc_ci_bootstrap(
    scores, labels, resamples: int = 1000, rng: Optional[np.random.Generator] = None, level: float = 0.95
) -> tuple[float, float]:
    """Percentile interval of the stratified bootstrap AUCs."""
    aucs = bootstrap_aucs(scores, labels, resamples, rng)
    alpha = (1 - level) / 2
    lo, hi = np.quantile(aucs, [alpha, 1 - alpha])
    return float(lo), float(hi)


def confusion_metrics(predictions, labels) -> tuple[float, float, float]:
    """Sensitivity, specificity and accuracy."""
    pred = np.asarray(predictions).astype(bool)
    labels = _check_binary(labels)
    tp = np.count_nonzero(pred & labels)
    tn = np.count_nonzero(~pred & ~labels)
    fn = np.count_nonzero(~pred & labels)
    fp = np.count_nonzero(pred & ~labels)
    return tp / (tp + fn), tn / (tn + fp), (tp + tn) / labels.size


def evaluate(
    scores,
    labels,
    predictions,
    resamples: int = 1000,
    rng: Optional[np.random.Generator] = None,
    level: float = 0.95,
    threshold: Optional[float] = None,
) -> EvalReport:
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    roc, auc = roc_and_auc(scores, labels)
    lo, hi = auc_ci_bootstrap(scores, labels, resamples, rng, level)
    sens, spec, acc = confusion_metrics(predictions, labels)
    n1 = int(np.count_nonzero(labels))
    return EvalReport(auc, (lo, hi), sens, spec, acc, roc, threshold, n1, labels.size - n1)


@dataclass
class CurveBand:
    p5: np.ndarray
    median: np.ndarray
    p95: np.ndarray

    def contains(self, series) -> np.ndarray:
        series = np.asarray(series)
        return (self.p5 <= series) & (series <= self.p95)


def curve_band(replicate_series: Sequence[Sequence[float]]) -> CurveBand:
    """Per-day nearest-rank 5th, 50th and 95th percentiles over replicates."""
    lengths = {len(s) for s in replicate_series}
    if len(replicate_series) < 2:
        raise ValueError("need at least two replicates")
    if len(lengths) != 1:
        raise ValueError(f"replicates have different lengths: {sorted(lengths)}")
    arr = np.asarray(replicate_series, dtype=float)
    p5, med, p95 = np.percentile(arr, [5, 50, 95], axis=0, method="inverted_cdf")
    return CurveBand(p5, med, p95)


@dataclass
class PeakReport:
    peaks: dict  # scenario -> (peak value, day index of the peak)
    ordering: list  # scenarios from lowest to highest peak

    def as_dict(self) -> dict:
        return {
            "peaks": {k: {"peak": float(v[0]), "day": int(v[1])} for k, v in self.peaks.items()},
            "ordering": list(self.ordering),
        }


def peak_comparison(scenario_series: Mapping[str, Sequence[float]]) -> PeakReport:
    if not scenario_series:
        raise ValueError("need at least one scenario")
    peaks = {}
    for name, series in scenario_series.items():
        arr = np.asarray(series, dtype=float)
        peaks[name] = (float(arr.max()), int(arr.argmax())) if arr.size else (0.0, -1)
    ordering = sorted(peaks, key=lambda k: (peaks[k][0], k))
    return PeakReport(peaks, ordering)


def _zscore(true: float, mean: float, sd: float) -> float:
    if sd == 0:
        return 0.0 if true == mean else math.inf
    return abs(true - mean) / sd


def recovery_report(
    true_c: CParams,
    mle_mean: CParams,
    mle_sd: CParams,
    ratio_estimates: tuple[float, float],
    true_ratios: tuple[float, float],
) -> dict:
    """Distance of each true coefficient from the fitted mean in fitted sds,
    plus absolute errors of the recovered ratios."""
    t, m, s = true_c.as_dict(), mle_mean.as_dict(), mle_sd.as_dict()
    return {
        "z": {k: _zscore(t[k], m[k], s[k]) for k in t},
        "ratio_abs_error": {
            "a0/a1": abs(ratio_estimates[0] - true_ratios[0]),
            "b0/b1": abs(ratio_estimates[1] - true_ratios[1]),
        },
    }
