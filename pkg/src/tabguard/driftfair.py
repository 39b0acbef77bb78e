"""Distribution drift (PSI, KS, Wasserstein-1) and two-group fairness gaps."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .errors import DataError, MetricError

PSI_FLOOR = 1e-6


@dataclass
class DriftReport:
    feature_psi: dict
    score_psi: float
    score_ks: float
    score_wasserstein: float
    feature_ks: dict = field(default_factory=dict)
    feature_wasserstein: dict = field(default_factory=dict)
    score_bin_edges: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "score": {
                "psi": self.score_psi,
                "ks": self.score_ks,
                "wasserstein": self.score_wasserstein,
                "bin_edges": self.score_bin_edges,
            },
            "features": {
                name: {
                    "psi": self.feature_psi[name],
                    "ks": self.feature_ks.get(name),
                    "wasserstein": self.feature_wasserstein.get(name),
                }
                for name in self.feature_psi
            },
        }


@dataclass
class FairnessReport:
    groups: list
    tau: float
    positive_rate: dict
    tpr: dict
    demographic_parity_diff: Optional[float]
    equal_opportunity_diff: Optional[float]
    reference_group: Optional[str] = None
    pairwise: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "groups": self.groups,
            "tau": self.tau,
            "positive_rate": self.positive_rate,
            "tpr": self.tpr,
            "demographic_parity_diff": self.demographic_parity_diff,
            "equal_opportunity_diff": self.equal_opportunity_diff,
            "reference_group": self.reference_group,
            "pairwise": self.pairwise,
        }


def _nonempty(a, name="input") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).ravel()
    if a.size == 0:
        raise DataError(f"{name} is empty")
    return a


def quantile_edges(baseline, bins: int = 10) -> np.ndarray:
    """Inner bin edges at baseline quantiles; duplicates collapse (fewer bins)."""
    baseline = _nonempty(baseline, "baseline")
    inner = np.quantile(baseline, np.arange(1, bins) / bins)
    return np.unique(inner)


def bin_proportions(values, edges) -> np.ndarray:
    """Proportions over (-inf, e1], (e1, e2], ..., (ek, inf)."""
    values = np.asarray(values, dtype=np.float64)
    k = np.searchsorted(edges, values, side="left")
    return np.bincount(k, minlength=len(edges) + 1) / values.size


def psi_from_proportions(p, q, floor: float = PSI_FLOOR) -> float:
    p = np.maximum(np.asarray(p, dtype=np.float64), floor)
    q = np.maximum(np.asarray(q, dtype=np.float64), floor)
    return float(np.sum((p - q) * np.log(p / q)))


def psi(baseline, shifted, bins: int = 10, edges=None) -> float:
    """Population stability index on baseline-quantile bins (or fixed ``edges``)."""
    baseline = _nonempty(baseline, "baseline")
    shifted = _nonempty(shifted, "shifted")
    if edges is None:
        edges = quantile_edges(baseline, bins)
    edges = np.asarray(edges, dtype=np.float64)
    return psi_from_proportions(bin_proportions(baseline, edges), bin_proportions(shifted, edges))


def ks_distance(a, b) -> float:
    a = np.sort(_nonempty(a, "a"))
    b = np.sort(_nonempty(b, "b"))
    return float(kernels.ks_gap(a, b))


def wasserstein1(a, b) -> float:
    """Integral of |F_a - F_b|; equal-size samples use the sorted-pairs mean."""
    a = np.sort(_nonempty(a, "a"))
    b = np.sort(_nonempty(b, "b"))
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    return float(kernels.wasserstein_sorted(a, b))


def drift_report(
    X_clean, X_adv, feature_names, scores_clean, scores_adv, bins: int = 10
) -> DriftReport:
    """Clean-vs-adversarial drift per feature column and on the model score."""
    X_clean = np.asarray(X_clean)
    X_adv = np.asarray(X_adv)
    fpsi, fks, fw = {}, {}, {}
    for j, name in enumerate(feature_names):
        fpsi[name] = psi(X_clean[:, j], X_adv[:, j], bins)
        fks[name] = ks_distance(X_clean[:, j], X_adv[:, j])
        fw[name] = wasserstein1(X_clean[:, j], X_adv[:, j])
    edges = quantile_edges(scores_clean, bins)
    return DriftReport(
        feature_psi=fpsi,
        score_psi=psi(scores_clean, scores_adv, edges=edges),
        score_ks=ks_distance(scores_clean, scores_adv),
        score_wasserstein=wasserstein1(scores_clean, scores_adv),
        feature_ks=fks,
        feature_wasserstein=fw,
        score_bin_edges=[float(e) for e in edges],
    )


def _group_keys(groups) -> tuple:
    groups = np.asarray([str(g) for g in groups], dtype=object)
    return groups, sorted(set(groups))


def _positive_rate(pred, mask, name):
    if not mask.any():
        raise MetricError(f"group {name!r} has no rows")
    return float(pred[mask].mean())


def _tpr(pred, labels, mask, name):
    pos = mask & (labels == 1)
    if not pos.any():
        raise MetricError(f"group {name!r} has no positive-label rows")
    return float(pred[pos].mean())


def demographic_parity_diff(scores, groups, tau: float = 0.5, group_a=None, group_b=None) -> float:
    """P(pred=1 | A) - P(pred=1 | B) with A < B lexicographically unless given."""
    pred = np.asarray(scores, dtype=np.float64) >= tau
    g, keys = _group_keys(groups)
    a = keys[0] if group_a is None else str(group_a)
    b = (keys[1] if len(keys) > 1 else None) if group_b is None else str(group_b)
    if b is None:
        raise MetricError("need two groups")
    return _positive_rate(pred, g == a, a) - _positive_rate(pred, g == b, b)


def equal_opportunity_diff(scores, labels, groups, tau: float = 0.5, group_a=None, group_b=None) -> float:
    """TPR(A) - TPR(B), groups ordered as in demographic_parity_diff."""
    pred = np.asarray(scores, dtype=np.float64) >= tau
    labels = np.asarray(labels)
    g, keys = _group_keys(groups)
    a = keys[0] if group_a is None else str(group_a)
    b = (keys[1] if len(keys) > 1 else None) if group_b is None else str(group_b)
    if b is None:
        raise MetricError("need two groups")
    return _tpr(pred, labels, g == a, a) - _tpr(pred, labels, g == b, b)


def fairness_report(scores, labels, groups, tau: float = 0.5) -> FairnessReport:
    """Two groups: A - B. More groups: each group minus the largest group, in ``pairwise``."""
    pred = np.asarray(scores, dtype=np.float64) >= tau
    labels = np.asarray(labels)
    g, keys = _group_keys(groups)
    rate = {k: _positive_rate(pred, g == k, k) for k in keys}
    tpr = {}
    for k in keys:
        try:
            tpr[k] = _tpr(pred, labels, g == k, k)
        except MetricError:
            tpr[k] = None
    if len(keys) < 2:
        raise MetricError("fairness needs at least two groups")

    def eo(a, b):
        return None if tpr[a] is None or tpr[b] is None else tpr[a] - tpr[b]

    if len(keys) == 2:
        a, b = keys
        return FairnessReport(keys, tau, rate, tpr, rate[a] - rate[b], eo(a, b))
    sizes = {k: int(np.sum(g == k)) for k in keys}
    ref = min(keys, key=lambda k: (-sizes[k], k))
    pairwise = {
        k: {"demographic_parity_diff": rate[k] - rate[ref], "equal_opportunity_diff": eo(k, ref)}
        for k in keys
        if k != ref
    }
    return FairnessReport(keys, tau, rate, tpr, None, None, ref, pairwise)
