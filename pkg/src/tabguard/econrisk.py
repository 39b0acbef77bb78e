"""Economic risk: expected loss, Monte Carlo VaR / ES, cost curves and thresholds."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DataError, ParameterError
from .metrics import _as_set
from .seeding import derive_seed

DEFAULT_LGD = 0.45
DEFAULT_EAD = 1.0
SIM_CHUNK = 1000


@dataclass
class ExposureBook:
    lgd: np.ndarray
    ead: np.ndarray

    def __post_init__(self):
        self.lgd = np.ascontiguousarray(self.lgd, dtype=np.float64).ravel()
        self.ead = np.ascontiguousarray(self.ead, dtype=np.float64).ravel()
        if self.lgd.shape != self.ead.shape:
            raise DataError("lgd and ead lengths differ")
        if not (np.all(np.isfinite(self.lgd)) and np.all(np.isfinite(self.ead))):
            raise DataError("exposures must be finite")
        if np.any((self.lgd < 0) | (self.lgd > 1)):
            raise DataError("lgd must lie in [0, 1]")
        if np.any(self.ead < 0):
            raise DataError("ead must be >= 0")

    @classmethod
    def uniform(cls, n: int, lgd: float = DEFAULT_LGD, ead: float = DEFAULT_EAD) -> "ExposureBook":
        return cls(np.full(n, lgd), np.full(n, ead))

    @property
    def n(self) -> int:
        return self.lgd.size

    @property
    def severity(self) -> np.ndarray:
        """Loss if the instance defaults: LGD * EAD."""
        return self.lgd * self.ead


@dataclass
class LossDistribution:
    losses: np.ndarray
    seed: int
    n_sims: int
    sorted_losses: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.losses = np.asarray(self.losses, dtype=np.float64)
        self.sorted_losses = np.sort(self.losses)

    @classmethod
    def from_losses(cls, losses, seed: int = 0) -> "LossDistribution":
        losses = np.asarray(losses, dtype=np.float64)
        return cls(losses, seed, losses.size)


@dataclass
class CostSpec:
    c_fp: float
    c_fn: float

    def __post_init__(self):
        if self.c_fp < 0 or self.c_fn < 0:
            raise ParameterError("costs must be >= 0")
        if self.c_fp == 0 and self.c_fn == 0:
            raise ParameterError("c_fp and c_fn cannot both be zero")


def _check_book(pd, book: ExposureBook) -> np.ndarray:
    pd = np.ascontiguousarray(pd, dtype=np.float64).ravel()
    if pd.size != book.n:
        raise DataError(f"{pd.size} probabilities for {book.n} exposures")
    if np.any((pd < 0) | (pd > 1)):
        raise DataError("probabilities must lie in [0, 1]")
    return pd


def expected_loss(pd, book: ExposureBook):
    """Per-instance PD*LGD*EAD and their portfolio sum."""
    pd = _check_book(pd, book)
    el = pd * book.lgd * book.ead
    return el, float(el.sum())


def simulate_losses(pd, book: ExposureBook, n_sims: int = 50_000, seed: int = 0) -> LossDistribution:
    """Independent Bernoulli(PD_i) defaults; each simulated loss is sum_i D_i * LGD_i * EAD_i.

    Simulations are drawn in fixed chunks of 1000, chunk ``c`` seeded by
    ``(seed, c)``, so any sharding over chunks reproduces the same array.
    """
    if n_sims < 1000:
        raise ParameterError(f"n_sims must be >= 1000, got {n_sims}")
    pd = _check_book(pd, book)
    w = np.ascontiguousarray(book.severity)
    out = np.empty(n_sims, dtype=np.float64)
    for c, start in enumerate(range(0, n_sims, SIM_CHUNK)):
        m = min(SIM_CHUNK, n_sims - start)
        rng = np.random.default_rng(derive_seed(seed, "loss_sim", c))
        u = rng.random((m, pd.size))
        out[start : start + m] = kernels.portfolio_losses(u, pd, w)
    return LossDistribution(out, seed, n_sims)


def _as_dist(dist) -> LossDistribution:
    return dist if isinstance(dist, LossDistribution) else LossDistribution.from_losses(dist)


def _var_index(alpha: float, n: int) -> int:
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    # round away float noise such as 0.95 * 100 = 95.00000000000001
    k = math.ceil(round(alpha * n, 9))
    return min(max(k, 1), n) - 1


def var(dist, alpha: float = 0.95) -> float:
    """Empirical generalized inverse: the ceil(alpha * n)-th smallest loss."""
    dist = _as_dist(dist)
    return float(dist.sorted_losses[_var_index(alpha, dist.sorted_losses.size)])


def es(dist, alpha: float = 0.95) -> float:
    """Mean of all simulated losses at or above VaR_alpha."""
    dist = _as_dist(dist)
    v = var(dist, alpha)
    s = dist.sorted_losses
    tail = s[np.searchsorted(s, v, side="left") :]
    return float(tail.mean())


def _confusion(scores, labels, tau):
    pred = scores >= tau
    pos = labels == 1
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    fn = int(np.sum(~pred & pos))
    tn = int(np.sum(~pred & ~pos))
    return tp, fp, tn, fn


def cost_curve(s, cost: CostSpec, grid_size: int = 101, labels=None):
    """Cost(tau) = c_FP * FP(tau) + c_FN * FN(tau) over an inclusive grid on [0, 1].

    Returns ``(rows, best_tau)`` where rows are dicts with tau, fp, fn, cost;
    the argmin prefers the smallest tau on ties.
    """
    s = _as_set(s, labels)
    if grid_size < 2:
        raise ParameterError("grid_size must be >= 2")
    taus = np.linspace(0.0, 1.0, grid_size)
    neg_scores = np.sort(s.scores[s.labels == 0])
    pos_scores = np.sort(s.scores[s.labels == 1])
    # FP: negatives with score >= tau; FN: positives with score < tau
    fp = neg_scores.size - np.searchsorted(neg_scores, taus, side="left")
    fn = np.searchsorted(pos_scores, taus, side="left")
    total = cost.c_fp * fp + cost.c_fn * fn
    best = int(np.argmin(total))
    rows = [
        {"tau": float(t), "fp": int(a), "fn": int(b), "cost": float(c)}
        for t, a, b, c in zip(taus, fp, fn, total)
    ]
    return rows, float(taus[best])


def bayes_threshold(cost: CostSpec) -> float:
    total = cost.c_fn + cost.c_fp
    if total <= 0:
        raise ParameterError("c_fn + c_fp must be positive")
    return cost.c_fn / total


def economic_confusion(s, tau: float, cost: CostSpec, book: ExposureBook, labels=None) -> dict:
    """Confusion counts at tau with cost totals and the expected loss hidden in false negatives."""
    s = _as_set(s, labels)
    if not 0.0 <= tau <= 1.0:
        raise ParameterError(f"tau must lie in [0, 1], got {tau}")
    if book.n != s.n:
        raise DataError("exposure book and score set differ in length")
    tp, fp, tn, fn = _confusion(s.scores, s.labels, tau)
    fn_mask = (s.scores < tau) & (s.labels == 1)
    fn_el = float(np.sum(s.scores[fn_mask] * book.lgd[fn_mask] * book.ead[fn_mask]))
    fn_exposure = float(np.sum(book.severity[fn_mask]))
    return {
        "tau": float(tau),
        "tp": tp,
        "fp": fp,
        "tn": tn,
        "fn": fn,
        "misclassification_cost": cost.c_fp * fp + cost.c_fn * fn,
        "fn_expected_loss": fn_el,
        "fn_exposure_at_risk": fn_exposure,
    }


def economic_summary(pd, book: ExposureBook, n_sims: int, alpha: float, seed: int) -> dict:
    _, el = expected_loss(pd, book)
    dist = simulate_losses(pd, book, n_sims, seed)
    return {
        "expected_loss": el,
        "var": var(dist, alpha),
        "es": es(dist, alpha),
        "alpha": alpha,
        "n_sims": n_sims,
        "sim_mean": float(dist.losses.mean()),
    }
