"""Untargeted white-box l-infinity attacks (FGSM, PGD) with ball and domain projection.

A model is anything with ``input_gradient(X, y)`` returning the per-row
gradient of the loss with respect to the inputs.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from .errors import ParameterError, ShapeError
from .seeding import row_uniform


@dataclass
class AttackConfig:
    epsilon: float = 0.05
    alpha: float = 0.01
    steps: int = 10
    random_start: bool = False
    domain_projector: bool = True
    seed: int = 0
    project_each_step: bool = False

    def __post_init__(self):
        # epsilon = 0 is allowed: it is the identity attack used by sweeps and defenses
        if not self.epsilon >= 0.0:
            raise ParameterError(f"epsilon must be >= 0, got {self.epsilon}")
        if not self.alpha > 0.0:
            raise ParameterError(f"alpha must be > 0, got {self.alpha}")
        if int(self.steps) < 1:
            raise ParameterError(f"steps must be >= 1, got {self.steps}")
        self.steps = int(self.steps)

    @classmethod
    def from_dict(cls, d: dict) -> "AttackConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **kw) -> "AttackConfig":
        d = asdict(self)
        d.update(kw)
        return AttackConfig(**d)


@dataclass
class DomainProjector:
    """Normalized-space box bounds plus a mask of columns that must not move."""

    lower: np.ndarray  # -inf where unbounded
    upper: np.ndarray  # +inf where unbounded
    immutable: np.ndarray  # bool mask

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=np.float64)
        self.upper = np.asarray(self.upper, dtype=np.float64)
        self.immutable = np.asarray(self.immutable, dtype=bool)
        if not (self.lower.shape == self.upper.shape == self.immutable.shape):
            raise ShapeError("projector arrays must share one shape")
        if np.any(self.lower > self.upper):
            raise ParameterError("projector lower bound exceeds upper bound")

    @property
    def d(self) -> int:
        return self.lower.size

    @classmethod
    def unconstrained(cls, d: int) -> "DomainProjector":
        return cls(np.full(d, -np.inf), np.full(d, np.inf), np.zeros(d, dtype=bool))

    @classmethod
    def from_schema(cls, schema, pre) -> "DomainProjector":
        """Translate original-unit bounds into the preprocessor's normalized space."""
        d = pre.n_columns
        lower, upper = np.full(d, -np.inf), np.full(d, np.inf)
        immutable = np.zeros(d, dtype=bool)
        specs = {f.name: f for f in schema.features}
        for name, cols in pre.groups():
            spec = specs[name]
            if spec.immutable:
                immutable[cols] = True
            if spec.kind == "categorical":
                lower[cols], upper[cols] = 0.0, 1.0
            else:
                j = cols[0]
                if spec.lower is not None:
                    lower[j] = (spec.lower - pre.means[name]) / pre.stds[name]
                if spec.upper is not None:
                    upper[j] = (spec.upper - pre.means[name]) / pre.stds[name]
        return cls(lower, upper, immutable)


def project_ball(x_adv, x, epsilon: float) -> np.ndarray:
    return np.clip(x_adv, x - epsilon, x + epsilon)


def project_domain(x_adv, x_orig, projector: Optional[DomainProjector]) -> np.ndarray:
    if projector is None:
        return np.array(x_adv, dtype=np.float64, copy=True)
    x_adv = np.asarray(x_adv, dtype=np.float64)
    if x_adv.shape[-1] != projector.d:
        raise ShapeError(f"projector covers {projector.d} columns, input has {x_adv.shape[-1]}")
    out = np.clip(x_adv, projector.lower, projector.upper)
    if projector.immutable.any():
        out[..., projector.immutable] = np.asarray(x_orig)[..., projector.immutable]
    return out


def _check(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ShapeError(f"X {X.shape} and y {y.shape} are not row-aligned")
    return X, y


def fgsm(model, X, y, cfg: AttackConfig, projector: Optional[DomainProjector] = None) -> np.ndarray:
    """x + eps * sign(grad), then ball projection and optional domain projection."""
    X, y = _check(X, y)
    g = model.input_gradient(X, y)
    x_adv = X + cfg.epsilon * np.sign(g)
    x_adv = project_ball(x_adv, X, cfg.epsilon)
    if cfg.domain_projector and projector is not None:
        x_adv = project_domain(x_adv, X, projector)
    return x_adv


def pgd(
    model,
    X,
    y,
    cfg: AttackConfig,
    projector: Optional[DomainProjector] = None,
    row_ids=None,
) -> np.ndarray:
    """Iterated signed-gradient ascent projected onto the eps-ball each step.

    The domain projection runs once after the last step unless
    ``cfg.project_each_step`` is set. Random-start noise for row ``r`` is
    keyed on ``(cfg.seed, row_ids[r])`` so sharding rows cannot change it.
    """
    X, y = _check(X, y)
    use_domain = cfg.domain_projector and projector is not None
    x_adv = X.copy()
    if cfg.random_start and cfg.epsilon > 0.0:
        ids = np.arange(X.shape[0]) if row_ids is None else np.asarray(row_ids)
        x_adv = X + cfg.epsilon * row_uniform(cfg.seed, ids, X.shape[1])
        x_adv = project_ball(x_adv, X, cfg.epsilon)
        if use_domain and cfg.project_each_step:
            x_adv = project_domain(x_adv, X, projector)
    for _ in range(cfg.steps):
        g = model.input_gradient(x_adv, y)
        x_adv = project_ball(x_adv + cfg.alpha * np.sign(g), X, cfg.epsilon)
        if use_domain and cfg.project_each_step:
            x_adv = project_domain(x_adv, X, projector)
    if use_domain:
        x_adv = project_domain(x_adv, X, projector)
    return x_adv


def run_attack(kind: str, model, X, y, cfg: AttackConfig, projector=None) -> np.ndarray:
    if kind == "clean":
        return np.array(X, dtype=np.float64, copy=True)
    if kind == "fgsm":
        return fgsm(model, X, y, cfg, projector)
    if kind == "pgd":
        return pgd(model, X, y, cfg, projector)
    raise ParameterError(f"unknown attack {kind!r}")
