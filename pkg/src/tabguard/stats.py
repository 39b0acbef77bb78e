"""Percentile bootstrap confidence intervals and interval separation."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import MetricError, ParameterError, StatisticsError

MAX_DISCARD_FRACTION = 0.10


@dataclass
class BootstrapCI:
    point: float
    lower: float
    upper: float
    level: float = 0.95
    B: int = 1000
    seed: int = 0
    n_discarded: int = 0

    def to_dict(self) -> dict:
        return {
            "point": self.point,
            "lower": self.lower,
            "upper": self.upper,
            "level": self.level,
            "B": self.B,
            "seed": self.seed,
            "n_discarded": self.n_discarded,
        }

    @property
    def width(self) -> float:
        return self.upper - self.lower


def _columns(data) -> tuple:
    data = data if isinstance(data, tuple) else (data,)
    cols = tuple(np.asarray(c) for c in data)
    n = cols[0].shape[0] if cols and cols[0].ndim else 0
    if n == 0:
        raise ParameterError("bootstrap data is empty")
    if any(c.shape[0] != n for c in cols):
        raise ParameterError("bootstrap data columns are not row-aligned")
    return cols, n


def _evaluate(metric, cols) -> Optional[float]:
    try:
        v = float(metric(*cols))
    except (MetricError, ZeroDivisionError, FloatingPointError):
        return None
    return v if math.isfinite(v) else None


def _replicate_indices(seed: int, B: int, n: int):
    # one child stream per replicate: results do not depend on how replicates are scheduled
    for child in np.random.SeedSequence(seed).spawn(B):
        yield np.random.default_rng(child).integers(0, n, size=n)


def _interval(values, level):
    v = np.sort(np.asarray(values, dtype=np.float64))
    a = (1.0 - level) / 2.0
    return float(np.quantile(v, a)), float(np.quantile(v, 1.0 - a))


def _check(B, level):
    if B < 100:
        raise ParameterError(f"B must be >= 100, got {B}")
    if not 0.0 < level < 1.0:
        raise ParameterError(f"level must lie in (0, 1), got {level}")


def bootstrap_ci(metric: Callable, data, B: int = 1000, level: float = 0.95, seed: int = 0) -> BootstrapCI:
    """Resample rows of ``data`` (an array or a tuple of row-aligned arrays) with replacement.

    ``metric`` is called with the resampled columns. Replicates on which it is
    undefined are discarded; more than 10% discarded is an error.
    """
    _check(B, level)
    cols, n = _columns(data)
    point = _evaluate(metric, cols)
    if point is None:
        raise StatisticsError("metric is undefined on the full sample")
    reps = []
    for idx in _replicate_indices(seed, B, n):
        v = _evaluate(metric, tuple(c[idx] for c in cols))
        if v is not None:
            reps.append(v)
    dropped = B - len(reps)
    if dropped > MAX_DISCARD_FRACTION * B:
        raise StatisticsError(f"metric undefined on {dropped} of {B} replicates")
    lo, hi = _interval(reps, level)
    return BootstrapCI(point, lo, hi, level, B, seed, dropped)


def paired_bootstrap_ci(metric: Callable, data_a, data_b, B: int = 1000, level: float = 0.95, seed: int = 0):
    """CIs for two row-aligned scenarios resampled with shared row indices.

    Returns ``(ci_a, ci_b, ci_diff)`` where the difference is metric(a) - metric(b)
    per replicate. A replicate undefined in either scenario is dropped from all three.
    """
    _check(B, level)
    ca, n = _columns(data_a)
    cb, nb = _columns(data_b)
    if nb != n:
        raise ParameterError("paired scenarios must have the same rows")
    pa, pb = _evaluate(metric, ca), _evaluate(metric, cb)
    if pa is None or pb is None:
        raise StatisticsError("metric is undefined on the full sample")
    ra, rb = [], []
    for idx in _replicate_indices(seed, B, n):
        va = _evaluate(metric, tuple(c[idx] for c in ca))
        vb = _evaluate(metric, tuple(c[idx] for c in cb))
        if va is not None and vb is not None:
            ra.append(va)
            rb.append(vb)
    dropped = B - len(ra)
    if dropped > MAX_DISCARD_FRACTION * B:
        raise StatisticsError(f"metric undefined on {dropped} of {B} replicates")
    diff = np.asarray(ra) - np.asarray(rb)
    out = []
    for point, reps in ((pa, ra), (pb, rb), (pa - pb, diff)):
        lo, hi = _interval(reps, level)
        out.append(BootstrapCI(point, lo, hi, level, B, seed, dropped))
    return tuple(out)


def ci_separated(a: BootstrapCI, b: BootstrapCI) -> bool:
    """True iff the intervals are disjoint (touching intervals overlap)."""
    if a.level != b.level:
        raise ParameterError(f"cannot compare a {a.level} interval with a {b.level} interval")
    return a.upper < b.lower or b.upper < a.lower
