"""Discrimination and calibration metrics over (score, label) vectors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import MetricError, ParameterError

SCENARIOS = ("clean", "fgsm", "pgd", "custom")


@dataclass
class ScoredSet:
    scores: np.ndarray
    labels: np.ndarray
    scenario: str = "custom"

    def __post_init__(self):
        self.scores = np.ascontiguousarray(self.scores, dtype=np.float64).ravel()
        self.labels = np.ascontiguousarray(self.labels).ravel().astype(np.int64)
        if self.scores.shape != self.labels.shape:
            raise ParameterError(
                f"scores and labels differ in length: {self.scores.size} vs {self.labels.size}"
            )
        if not np.isin(self.labels, (0, 1)).all():
            raise ParameterError("labels must be 0/1")

    @property
    def n(self) -> int:
        return int(self.scores.size)


@dataclass
class ReliabilityBins:
    edges: np.ndarray
    counts: np.ndarray
    confidence: np.ndarray  # mean score per bin, nan when empty
    accuracy: np.ndarray  # empirical positive rate per bin, nan when empty
    binning: str = "width"

    def rows(self):
        for m in range(self.counts.size):
            yield {
                "bin": m,
                "lower": float(self.edges[m]),
                "upper": float(self.edges[m + 1]),
                "count": int(self.counts[m]),
                "confidence": _nan_to_none(self.confidence[m]),
                "accuracy": _nan_to_none(self.accuracy[m]),
            }


def _nan_to_none(v):
    v = float(v)
    return None if np.isnan(v) else v


def _as_set(s, labels=None) -> ScoredSet:
    if isinstance(s, ScoredSet):
        return s
    return ScoredSet(s, labels)


def _require_both_classes(s: ScoredSet):
    n_pos = int(s.labels.sum())
    if n_pos == 0 or n_pos == s.n:
        raise MetricError("both classes must be present")
    return n_pos, s.n - n_pos


def auroc(s, labels=None) -> float:
    """Mann-Whitney AUROC; tied (positive, negative) pairs count one half."""
    s = _as_set(s, labels)
    n_pos, n_neg = _require_both_classes(s)
    order = np.argsort(s.scores, kind="stable")
    greater, ties = kernels.auc_counts(
        s.scores[order], np.ascontiguousarray(s.labels[order], dtype=np.uint8)
    )
    return (2 * greater + ties) / (2.0 * n_pos * n_neg)


def ks_stat(s, labels=None) -> float:
    """max_t |F1(t) - F0(t)| over all observed score thresholds."""
    s = _as_set(s, labels)
    _require_both_classes(s)
    pos = np.sort(s.scores[s.labels == 1])
    neg = np.sort(s.scores[s.labels == 0])
    return float(kernels.ks_gap(pos, neg))


def gini(s, labels=None) -> float:
    return 2.0 * auroc(s, labels) - 1.0


def accuracy(s, labels=None, tau: float = 0.5) -> float:
    s = _as_set(s, labels)
    if not 0.0 <= tau <= 1.0:
        raise ParameterError(f"tau must lie in [0, 1], got {tau}")
    if s.n == 0:
        raise MetricError("empty score set")
    pred = (s.scores >= tau).astype(np.int64)
    return float(np.mean(pred == s.labels))


def brier(s, labels=None) -> float:
    s = _as_set(s, labels)
    if s.n == 0:
        raise MetricError("empty score set")
    return float(np.mean((s.scores - s.labels) ** 2))


def _bin_edges(scores: np.ndarray, n_bins: int, binning: str) -> np.ndarray:
    if binning == "width":
        return np.linspace(0.0, 1.0, n_bins + 1)
    if binning == "mass":
        inner = np.quantile(scores, np.arange(1, n_bins) / n_bins) if scores.size else []
        return np.concatenate(([0.0], inner, [1.0]))
    raise ParameterError(f"unknown binning {binning!r}; expected 'width' or 'mass'")


def reliability_bins(s, labels=None, n_bins: int = 10, binning: str = "width") -> ReliabilityBins:
    s = _as_set(s, labels)
    if n_bins < 1:
        raise ParameterError("n_bins must be >= 1")
    edges = np.ascontiguousarray(_bin_edges(s.scores, n_bins, binning), dtype=np.float64)
    counts, conf_sum, acc_sum = kernels.bin_stats(
        s.scores, np.ascontiguousarray(s.labels, dtype=np.float64), edges
    )
    with np.errstate(invalid="ignore", divide="ignore"):
        conf = np.where(counts > 0, conf_sum / np.maximum(counts, 1), np.nan)
        acc = np.where(counts > 0, acc_sum / np.maximum(counts, 1), np.nan)
    return ReliabilityBins(edges, np.asarray(counts), conf, acc, binning)


def ece(s, labels=None, n_bins: int = 10, binning: str = "width"):
    """Expected calibration error and the bins it was computed from.

    Bins are right-closed; a score equal to an inner edge falls in the lower
    bin and a score of exactly 0 falls in the first bin. Empty bins add 0.
    """
    s = _as_set(s, labels)
    if s.n == 0:
        raise MetricError("empty score set")
    bins = reliability_bins(s, n_bins=n_bins, binning=binning)
    filled = bins.counts > 0
    gaps = np.abs(bins.accuracy[filled] - bins.confidence[filled])
    value = float(np.sum(bins.counts[filled] / s.n * gaps))
    return value, bins


def cap_curve(s, labels=None):
    """Cumulative accuracy profile: (fraction of population, fraction of positives captured).

    Rows are ranked by descending score; tied scores are taken as a block so
    the curve does not depend on input order.
    """
    s = _as_set(s, labels)
    n_pos, _ = _require_both_classes(s)
    order = np.argsort(-s.scores, kind="stable")
    sorted_scores = s.scores[order]
    hits = np.cumsum(s.labels[order])
    # keep the last index of each tie block
    last = np.r_[sorted_scores[1:] != sorted_scores[:-1], True]
    x = np.concatenate(([0.0], (np.flatnonzero(last) + 1) / s.n))
    y = np.concatenate(([0.0], hits[last] / n_pos))
    return x, y


def discrimination_summary(s, labels=None, tau: float = 0.5) -> dict:
    s = _as_set(s, labels)
    auc = auroc(s)
    return {
        "auroc": auc,
        "ks": ks_stat(s),
        "gini": 2.0 * auc - 1.0,
        "accuracy": accuracy(s, tau=tau),
    }


def calibration_summary(s, labels=None, n_bins: int = 10, binning: str = "width") -> dict:
    s = _as_set(s, labels)
    value, bins = ece(s, n_bins=n_bins, binning=binning)
    return {"ece": value, "brier": brier(s), "bins": list(bins.rows())}
