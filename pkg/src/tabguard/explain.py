"""Kernel SHAP attributions and clean-vs-adversarial attribution stability."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional

import numpy as np

from .errors import MetricError, ParameterError, SolverError
from .seeding import derive_seed

logger = logging.getLogger(__name__)

EVAL_CHUNK_ROWS = 262_144


@dataclass
class Attribution:
    values: np.ndarray
    base_value: float
    prediction: float
    feature_names: list = field(default_factory=list)
    regularized: bool = False

    @property
    def efficiency_gap(self) -> float:
        return abs(self.base_value + float(np.sum(self.values)) - self.prediction)


@dataclass
class StabilityStats:
    cosine: np.ndarray
    spearman: np.ndarray
    l2: np.ndarray
    rows: np.ndarray
    n_errors: int = 0
    errors: list = field(default_factory=list)

    def aggregate(self) -> dict:
        out = {}
        for name in ("cosine", "spearman", "l2"):
            v = getattr(self, name)
            v = v[~np.isnan(v)]
            if v.size == 0:
                out[name] = {"mean": None, "median": None, "p05": None}
            else:
                out[name] = {
                    "mean": float(np.mean(v)),
                    "median": float(np.median(v)),
                    "p05": float(np.quantile(v, 0.05)),
                }
        out["n_instances"] = int(self.rows.size)
        out["n_errors"] = self.n_errors
        return out


def _predictor(model):
    return model.predict_proba if hasattr(model, "predict_proba") else model


def _coalitions(M: int, n_coalitions: int, rng: np.random.Generator):
    """Binary coalition matrix and kernel weights (all-empty / all-full excluded).

    Coalition sizes whose full set of subsets fits the remaining budget are
    enumerated exactly (pairing size k with M - k); the rest are sampled with
    complements, each sample carrying an equal share of the leftover weight.
    """
    budget = n_coalitions - 2
    if M <= 1:
        return np.zeros((0, M), dtype=bool), np.zeros(0)
    if 2**M - 2 <= budget:
        rows, weights = [], []
        for k in range(1, M):
            w = (M - 1) / (math.comb(M, k) * k * (M - k))
            for S in combinations(range(M), k):
                z = np.zeros(M, dtype=bool)
                z[list(S)] = True
                rows.append(z)
                weights.append(w)
        return np.array(rows), np.array(weights)

    n_sizes = (M - 1 + 1) // 2  # sizes 1..ceil((M-1)/2)
    n_paired = (M - 1) // 2
    size_w = np.array([(M - 1) / (k * (M - k)) for k in range(1, n_sizes + 1)])
    size_w[:n_paired] *= 2
    size_w /= size_w.sum()

    rows, weights = [], []
    remaining = budget
    remaining_w = 1.0
    full_sizes = 0
    for i, k in enumerate(range(1, n_sizes + 1)):
        paired = i < n_paired
        n_sub = math.comb(M, k) * (2 if paired else 1)
        if remaining_w <= 0 or remaining * size_w[i] / remaining_w < n_sub - 1e-8:
            break
        full_sizes += 1
        w = size_w[i] / n_sub
        for S in combinations(range(M), k):
            z = np.zeros(M, dtype=bool)
            z[list(S)] = True
            rows.append(z)
            weights.append(w)
            if paired:
                rows.append(~z)
                weights.append(w)
        remaining -= n_sub
        remaining_w -= size_w[i]

    left = size_w[full_sizes:]
    if remaining > 0 and left.size and left.sum() > 0:
        p = left / left.sum()
        counts = {}
        drawn = 0
        while drawn < remaining:
            i = full_sizes + int(rng.choice(left.size, p=p))
            k = i + 1
            z = np.zeros(M, dtype=bool)
            z[rng.choice(M, size=k, replace=False)] = True
            for zz in ((z, ~z) if i < n_paired and drawn + 1 < remaining else (z,)):
                key = zz.tobytes()
                counts[key] = counts.get(key, 0) + 1
                drawn += 1
        share = remaining_w / drawn
        for key in sorted(counts):
            rows.append(np.frombuffer(key, dtype=bool).copy())
            weights.append(counts[key] * share)
    return np.array(rows), np.array(weights)


def _coalition_values(f, x, background, Z, col_groups) -> np.ndarray:
    """v(S) = mean over background rows of f(x on S, background elsewhere)."""
    m, d = background.shape
    colmask = np.zeros((Z.shape[0], d), dtype=bool)
    for j, cols in enumerate(col_groups):
        colmask[:, cols] = Z[:, [j]]
    out = np.empty(Z.shape[0])
    step = max(1, EVAL_CHUNK_ROWS // m)
    for start in range(0, Z.shape[0], step):
        cm = colmask[start : start + step]
        synth = np.where(cm[:, None, :], x[None, None, :], background[None, :, :])
        preds = np.asarray(f(synth.reshape(-1, d)), dtype=np.float64)
        out[start : start + step] = preds.reshape(cm.shape[0], m).mean(axis=1)
    return out


def kernel_shap(
    model,
    x,
    background,
    n_coalitions: int = 2048,
    seed: int = 0,
    groups: Optional[list] = None,
) -> Attribution:
    """Kernel SHAP with an interventional (background-mean) value function.

    ``groups`` is an optional list of ``(name, column indices)`` treating each
    block (e.g. a one-hot category) as a single player. Efficiency is imposed
    exactly by eliminating the last player from the weighted regression.
    """
    f = _predictor(model)
    x = np.asarray(x, dtype=np.float64).ravel()
    background = np.asarray(background, dtype=np.float64)
    if background.ndim != 2 or background.shape[1] != x.size:
        raise ParameterError("background must be (m, d) matching x")
    if background.shape[0] < 10:
        raise ParameterError("background needs at least 10 rows")
    if groups is None:
        groups = [(f"x{j}", [j]) for j in range(x.size)]
    names = [g[0] for g in groups]
    col_groups = [list(g[1]) for g in groups]
    M = len(groups)
    if n_coalitions < 2 * M + 4:
        raise ParameterError(f"n_coalitions must be >= 2*M+4 = {2 * M + 4}")

    base = float(np.mean(f(background)))
    pred = float(np.asarray(f(x[None, :]), dtype=np.float64)[0])
    total = pred - base
    if M == 1:
        return Attribution(np.array([total]), base, pred, names)

    rng = np.random.default_rng(seed)
    Z, w = _coalitions(M, n_coalitions, rng)
    v = _coalition_values(f, x, background, Z, col_groups) - base
    Zf = Z.astype(np.float64)
    y = v - Zf[:, -1] * total
    A = Zf[:, :-1] - Zf[:, [-1]]
    sw = np.sqrt(w)
    Aw, yw = A * sw[:, None], y * sw
    regularized = False
    rank = np.linalg.matrix_rank(Aw)
    if rank < M - 1:
        regularized = True
        logger.warning("singular coalition system (rank %d < %d); using ridge fallback", rank, M - 1)
        lam = 1e-8 * max(1.0, float(np.trace(Aw.T @ Aw)))
        try:
            phi = np.linalg.solve(Aw.T @ Aw + lam * np.eye(M - 1), Aw.T @ yw)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"coalition regression failed: {exc}") from None
    else:
        phi = np.linalg.lstsq(Aw, yw, rcond=None)[0]
    values = np.append(phi, total - phi.sum())
    return Attribution(values, base, pred, names, regularized)


def cosine_sim(s, s2) -> float:
    """Cosine similarity; two zero vectors give 1, exactly one zero vector gives 0."""
    s = np.asarray(s, dtype=np.float64)
    s2 = np.asarray(s2, dtype=np.float64)
    na, nb = np.linalg.norm(s), np.linalg.norm(s2)
    if na == 0 and nb == 0:
        return 1.0
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(np.dot(s, s2) / (na * nb), -1.0, 1.0))


def average_ranks(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    order = np.argsort(a, kind="stable")
    ranks = np.empty(a.size)
    sa = a[order]
    i = 0
    while i < a.size:
        j = i
        while j + 1 < a.size and sa[j + 1] == sa[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(s, s2) -> float:
    """Rank correlation; the closed form without ties, Pearson on average ranks with ties."""
    s = np.asarray(s, dtype=np.float64)
    s2 = np.asarray(s2, dtype=np.float64)
    d = s.size
    if d < 2 or s2.size != d:
        raise MetricError("spearman needs two equal-length vectors with d >= 2")
    if np.all(s == s[0]) or np.all(s2 == s2[0]):
        raise MetricError("spearman undefined for a constant vector")
    r1, r2 = average_ranks(s), average_ranks(s2)
    if np.unique(s).size == d and np.unique(s2).size == d:
        return float(1.0 - 6.0 * np.sum((r1 - r2) ** 2) / (d * (d * d - 1)))
    c1, c2 = r1 - r1.mean(), r2 - r2.mean()
    return float(np.dot(c1, c2) / math.sqrt(np.dot(c1, c1) * np.dot(c2, c2)))


def l2_dist(s, s2) -> float:
    return float(np.linalg.norm(np.asarray(s, dtype=np.float64) - np.asarray(s2, dtype=np.float64)))


def stability_report(
    model,
    X_clean,
    X_adv,
    background,
    n_instances: int = 100,
    seed: int = 0,
    n_coalitions: int = 2048,
    groups: Optional[list] = None,
    keep_attributions: bool = False,
):
    """Per-row clean vs adversarial attribution similarity for the first ``n_instances`` rows.

    Both attributions of row ``i`` use the seed ``derive_seed(seed, "shap_row", i)``,
    so they share coalitions. Rows whose attribution or metric fails are
    skipped and counted. Returns ``StabilityStats`` (plus the attribution
    pairs when ``keep_attributions``).
    """
    return stability_reports(
        model, X_clean, {"adv": X_adv}, background, n_instances, seed, n_coalitions, groups, keep_attributions
    )["adv"]


def stability_reports(
    model,
    X_clean,
    adversarial: dict,
    background,
    n_instances: int = 100,
    seed: int = 0,
    n_coalitions: int = 2048,
    groups: Optional[list] = None,
    keep_attributions: bool = False,
) -> dict:
    """``stability_report`` for several adversarial matrices, reusing the clean attributions."""
    X_clean = np.asarray(X_clean, dtype=np.float64)
    adversarial = {k: np.asarray(v, dtype=np.float64) for k, v in adversarial.items()}
    for name, X_adv in adversarial.items():
        if X_clean.shape != X_adv.shape:
            raise ParameterError(f"clean and {name} matrices must be row-aligned")
    n = min(n_instances, X_clean.shape[0])
    clean, clean_err = [], {}
    for i in range(n):
        try:
            clean.append(kernel_shap(model, X_clean[i], background, n_coalitions, derive_seed(seed, "shap_row", i), groups))
        except (SolverError, ParameterError) as exc:
            clean.append(None)
            clean_err[i] = str(exc)

    results = {}
    for name, X_adv in adversarial.items():
        cos, rho, l2 = np.full(n, np.nan), np.full(n, np.nan), np.full(n, np.nan)
        pairs, errors = [], []
        for i in range(n):
            a = clean[i]
            if a is None:
                errors.append({"row": i, "error": clean_err[i]})
                pairs.append(None)
                continue
            if np.array_equal(X_adv[i], X_clean[i]):
                b = a
            else:
                try:
                    b = kernel_shap(model, X_adv[i], background, n_coalitions, derive_seed(seed, "shap_row", i), groups)
                except (SolverError, ParameterError) as exc:
                    errors.append({"row": i, "error": str(exc)})
                    pairs.append(None)
                    continue
            pairs.append((a, b))
            cos[i] = cosine_sim(a.values, b.values)
            l2[i] = l2_dist(a.values, b.values)
            try:
                rho[i] = spearman(a.values, b.values)
            except MetricError as exc:
                errors.append({"row": i, "error": str(exc)})
        stats = StabilityStats(cos, rho, l2, np.arange(n), len(errors), errors)
        results[name] = (stats, pairs) if keep_attributions else stats
    return results


def write_attributions_csv(path, pairs, row_ids=None) -> None:
    """One line per (row, feature): clean and adversarial SHAP values."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_id", "feature", "clean_shap", "adv_shap"])
        for i, pair in enumerate(pairs):
            if pair is None:
                continue
            a, b = pair
            rid = i if row_ids is None else row_ids[i]
            for name, va, vb in zip(a.feature_names, a.values, b.values):
                w.writerow([rid, name, f"{va:.6g}", f"{vb:.6g}"])
