"""Model hardening: on-the-fly PGD adversarial training and Gaussian input-noise training."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from . import nn
from .attacks import AttackConfig, DomainProjector, pgd
from .errors import ParameterError
from .seeding import derive_seed

MODES = ("pgd_adv_training", "noise_regularized")


@dataclass
class DefenseConfig:
    mode: str = "pgd_adv_training"
    attack: AttackConfig = field(default_factory=AttackConfig)
    noise_sigma: float = 0.05
    adv_mix_ratio: float = 0.5

    def __post_init__(self):
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}, got {self.mode!r}")
        if isinstance(self.attack, dict):
            self.attack = AttackConfig.from_dict(self.attack)
        if not self.noise_sigma >= 0.0:
            raise ParameterError("noise_sigma must be >= 0")
        if not 0.0 <= self.adv_mix_ratio <= 1.0:
            raise ParameterError("adv_mix_ratio must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "DefenseConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def to_dict(self) -> dict:
        return asdict(self)


def _adversarial_hook(cfg: DefenseConfig, seed: int, projector: Optional[DomainProjector]):
    ratio = cfg.adv_mix_ratio

    def hook(params, Xb, yb, epoch, batch, idx):
        k = int(round(ratio * Xb.shape[0]))
        if k == 0:
            return Xb
        # the first k rows of an already shuffled batch are replaced
        acfg = cfg.attack.replace(seed=derive_seed(seed, "adv", epoch, batch))
        out = Xb.copy()
        out[:k] = pgd(params, Xb[:k], yb[:k], acfg, projector, row_ids=idx[:k])
        return out

    return hook


def _noise_hook(sigma: float, seed: int):
    streams = {}

    def hook(params, Xb, yb, epoch, batch, idx):
        if epoch not in streams:
            streams.clear()
            streams[epoch] = np.random.default_rng(derive_seed(seed, "noise", epoch))
        return Xb + streams[epoch].normal(0.0, sigma, size=Xb.shape)

    return hook


def adversarial_train(
    train,
    val,
    train_cfg: nn.TrainConfig,
    defense_cfg: DefenseConfig,
    projector: Optional[DomainProjector] = None,
    **ckpt_kw,
) -> nn.MlpCheckpoint:
    """Replace ``adv_mix_ratio`` of every batch with PGD examples against the current weights."""
    if defense_cfg.mode != "pgd_adv_training":
        raise ParameterError("adversarial_train requires mode='pgd_adv_training'")
    hook = None
    if defense_cfg.adv_mix_ratio > 0.0:
        hook = _adversarial_hook(defense_cfg, train_cfg.seed, projector)
    ckpt = nn.train(train, val, train_cfg, batch_hook=hook, **ckpt_kw)
    ckpt.meta = {**ckpt.meta, "defense": defense_cfg.to_dict()}
    return ckpt


def noise_regularized_train(
    train, val, train_cfg: nn.TrainConfig, defense_cfg: DefenseConfig, **ckpt_kw
) -> nn.MlpCheckpoint:
    """Add i.i.d. N(0, sigma^2) noise to every input column of every batch.

    Noise is a training-time regularizer, so immutable columns are perturbed
    as well. Draws come from a per-epoch stream separate from the training rng.
    """
    if defense_cfg.mode != "noise_regularized":
        raise ParameterError("noise_regularized_train requires mode='noise_regularized'")
    sigma = defense_cfg.noise_sigma
    hook = _noise_hook(sigma, train_cfg.seed) if sigma > 0.0 else None
    ckpt = nn.train(train, val, train_cfg, batch_hook=hook, **ckpt_kw)
    ckpt.meta = {**ckpt.meta, "defense": defense_cfg.to_dict()}
    return ckpt


def harden(train, val, train_cfg, defense_cfg, projector=None, **ckpt_kw) -> nn.MlpCheckpoint:
    if defense_cfg.mode == "pgd_adv_training":
        return adversarial_train(train, val, train_cfg, defense_cfg, projector, **ckpt_kw)
    return noise_regularized_train(train, val, train_cfg, defense_cfg, **ckpt_kw)
