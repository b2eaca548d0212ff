"""Score-to-decision layer: POT tail thresholding, best-F1 evaluation with
optional point-adjust, transfer distance between deployments, and a KDE-based
KL distance between datasets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import gaussian_kde

from driftfit.errors import EvalError, NumericError, ShapeError, ThresholdError
from driftfit.numerics import Rng, make_rng

MIN_EXCESSES = 30


@dataclass
class PotThreshold:
    """Generalized-Pareto tail fit over score excesses and the induced
    extreme-quantile threshold."""

    init_quantile: float
    t: float          # initial (empirical-quantile) threshold
    xi: float         # GPD shape
    sigma: float      # GPD scale
    q: float          # target risk per observation
    z_q: float        # final anomaly threshold
    n_total: int
    n_excess: int

    def threshold_for(self, q: float) -> float:
        """Threshold at a different target risk using the fitted tail."""
        return _gpd_quantile(self.t, self.sigma, self.xi, q, self.n_total, self.n_excess)


def _gpd_quantile(t: float, sigma: float, xi: float, q: float,
                  n_total: int, n_excess: int) -> float:
    ratio = q * n_total / n_excess
    if abs(xi) < 1e-6:  # exponential limit
        return t + sigma * math.log(n_excess / (q * n_total))
    return t + (sigma / xi) * (ratio ** (-xi) - 1.0)


def pot_fit_threshold(scores: np.ndarray, q: float = 1e-3,
                      init_quantile: float = 0.98) -> PotThreshold:
    """Peaks-over-threshold: empirical initial threshold, method-of-moments
    GPD fit on the excesses, extreme quantile at risk q.

    Moment estimates: xi = (1 - m^2/s^2)/2, sigma = m (1 + m^2/s^2)/2 with m
    and s^2 the excess mean and variance; valid for xi < 1/2.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise ShapeError("evaluate.pot_fit_threshold: scores must be a non-empty vector")
    if not 0.0 < q < 1.0 or not 0.0 < init_quantile < 1.0:
        raise ValueError("evaluate.pot_fit_threshold: q and init_quantile must lie in (0, 1)")
    t = float(np.quantile(scores, init_quantile))
    excess = scores[scores > t] - t
    n_excess = int(excess.size)
    n_total = int(scores.size)
    if n_excess < MIN_EXCESSES:
        raise ThresholdError(
            f"evaluate.pot_fit_threshold: {n_excess} excesses above the initial threshold, "
            f"need at least {MIN_EXCESSES}")
    m = float(excess.mean())
    s2 = float(excess.var(ddof=1))
    if s2 <= 0.0:
        raise ThresholdError("evaluate.pot_fit_threshold: zero excess variance")
    xi = 0.5 * (1.0 - m * m / s2)
    sigma = 0.5 * m * (1.0 + m * m / s2)
    if xi >= 0.5:
        raise ThresholdError(
            f"evaluate.pot_fit_threshold: moment estimate xi={xi:.3f} >= 0.5 is outside "
            "the estimator's validity range")
    if q * n_total > n_excess:
        raise ThresholdError(
            f"evaluate.pot_fit_threshold: target risk q={q:g} is not in the fitted tail")
    z_q = _gpd_quantile(t, sigma, xi, q, n_total, n_excess)
    return PotThreshold(init_quantile=init_quantile, t=t, xi=xi, sigma=sigma, q=q,
                        z_q=z_q, n_total=n_total, n_excess=n_excess)


# ---------------------------------------------------------------------------
# Best-F1 evaluation

@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    threshold: float
    point_adjust: bool

    def line(self) -> str:
        return (f"precision={self.precision:.6f} recall={self.recall:.6f} "
                f"f1={self.f1:.6f} threshold={self.threshold:.10g} "
                f"point_adjust={str(self.point_adjust).lower()}")


def _label_segments(labels: np.ndarray) -> list[tuple[int, int]]:
    """Half-open (start, stop) runs of consecutive 1-labels."""
    edges = np.flatnonzero(np.diff(np.concatenate(([0], labels, [0]))))
    return [(int(edges[i]), int(edges[i + 1])) for i in range(0, len(edges), 2)]


def _validate_scores_labels(scores: np.ndarray, labels: np.ndarray):
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ShapeError("evaluate: scores and labels must be equal-length vectors")
    if not np.all((labels == 0) | (labels == 1)):
        raise EvalError("evaluate: labels must be 0 or 1")
    if labels.sum() == 0:
        raise EvalError("evaluate: no positive labels; precision/recall undefined")


def _confusion_curve(scores: np.ndarray, labels: np.ndarray, thresholds: np.ndarray,
                     point_adjust: bool) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(tp, fp, total_pos-as-denominator) for predictions score >= threshold,
    vectorized over thresholds."""
    neg_sorted = np.sort(scores[labels == 0])
    fp = neg_sorted.size - np.searchsorted(neg_sorted, thresholds, side="left")
    if point_adjust:
        segments = _label_segments(labels)
        seg_max = np.array([scores[a:b].max() for a, b in segments])
        seg_len = np.array([b - a for a, b in segments], dtype=np.float64)
        order = np.argsort(seg_max)
        seg_max = seg_max[order]
        cum_len = np.concatenate(([0.0], np.cumsum(seg_len[order])))
        total = cum_len[-1]
        idx = np.searchsorted(seg_max, thresholds, side="left")
        tp = total - cum_len[idx]
    else:
        pos_sorted = np.sort(scores[labels == 1])
        total = float(pos_sorted.size)
        tp = total - np.searchsorted(pos_sorted, thresholds, side="left")
    return tp.astype(np.float64), fp.astype(np.float64), total


def _report_from_counts(tp: float, fp: float, total_pos: float, threshold: float,
                        point_adjust: bool) -> EvalReport:
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / total_pos
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return EvalReport(precision, recall, f1, threshold, point_adjust)


def evaluate_at_threshold(scores: np.ndarray, labels: np.ndarray, threshold: float,
                          point_adjust: bool = False) -> EvalReport:
    """Precision/recall/F1 of the rule score >= threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    _validate_scores_labels(scores, labels)
    thr = np.array([threshold])
    tp, fp, total = _confusion_curve(scores, labels, thr, point_adjust)
    return _report_from_counts(tp[0], fp[0], total, threshold, point_adjust)


def best_f1(scores: np.ndarray, labels: np.ndarray, point_adjust: bool = False) -> EvalReport:
    """Max-F1 report over every distinct score value used as the threshold.

    With point_adjust, any detection inside a contiguous anomaly segment
    counts the whole segment as detected before precision/recall are formed.
    Ties pick the largest threshold.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    _validate_scores_labels(scores, labels)
    thresholds = np.unique(scores)[::-1]
    tp, fp, total = _confusion_curve(scores, labels, thresholds, point_adjust)
    precision = np.divide(tp, tp + fp, out=np.zeros_like(tp), where=tp + fp > 0)
    recall = tp / total
    pr = precision + recall
    f1 = np.divide(2.0 * precision * recall, pr, out=np.zeros_like(tp), where=pr > 0)
    best = int(np.argmax(f1))
    return EvalReport(float(precision[best]), float(recall[best]), float(f1[best]),
                      float(thresholds[best]), point_adjust)


def transfer_distance(f1_star: float, f1: float) -> float:
    """Relative F1 degradation (f1* - f1) / f1 of deploying a model trained on
    one distribution onto another; asymmetric, may be negative."""
    if f1 <= 0.0:
        raise EvalError("evaluate.transfer_distance: undefined for f1 = 0")
    return (f1_star - f1) / f1


def kde_kl(a, b, bandwidth: float | None = None, n_mc: int = 4096,
           rng: Rng | None = None) -> float:
    """Monte-Carlo KL(a || b) between Gaussian KDEs of two frames.

    Scott's-rule bandwidth by default; n_mc points are resampled from a's
    density. The estimate is clamped below at 0. Asymmetric by definition.
    """
    va = a.values if hasattr(a, "values") else np.asarray(a, dtype=np.float64)
    vb = b.values if hasattr(b, "values") else np.asarray(b, dtype=np.float64)
    if va.ndim != 2 or vb.ndim != 2 or va.shape[0] == 0 or vb.shape[0] == 0:
        raise ShapeError("evaluate.kde_kl: inputs must be non-empty (T, d) arrays")
    if va.shape[1] != vb.shape[1]:
        raise ShapeError(f"evaluate.kde_kl: channel mismatch {va.shape[1]} != {vb.shape[1]}")
    rng = rng if rng is not None else make_rng(0)
    try:
        kde_a = gaussian_kde(va.T, bw_method=bandwidth)
        kde_b = gaussian_kde(vb.T, bw_method=bandwidth)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"evaluate.kde_kl: singular data covariance ({exc})") from exc
    xs = kde_a.resample(n_mc, seed=rng)
    kl = float(np.mean(kde_a.logpdf(xs) - kde_b.logpdf(xs)))
    return max(kl, 0.0)
