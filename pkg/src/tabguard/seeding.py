"""Deterministic seed derivation.

Every random stream in the pipeline is derived from a master seed and a
label, so stages (and shards within a stage) can be rerun independently
without changing results.
"""
from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def derive_seed(seed: int, *labels) -> int:
    """Hash ``(seed, *labels)`` into a non-negative 63-bit integer."""
    h = hashlib.sha256(repr(int(seed)).encode())
    for label in labels:
        h.update(b"\x1f")
        h.update(str(label).encode())
    return int.from_bytes(h.digest()[:8], "little") >> 1


def rng_for(seed: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *labels))


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def row_uniform(seed: int, rows, d: int, low: float = -1.0, high: float = 1.0) -> np.ndarray:
    """Uniform noise of shape ``(len(rows), d)`` keyed on ``(seed, row, column)``.

    Row ``r`` always receives the same values regardless of which other rows
    are requested alongside it, which keeps sharded attacks bit-identical to
    a single pass.
    """
    rows = np.asarray(rows, dtype=np.uint64).reshape(-1, 1)
    cols = np.arange(d, dtype=np.uint64).reshape(1, -1)
    key = np.uint64(derive_seed(seed, "row_uniform"))
    with np.errstate(over="ignore"):
        x = _splitmix64(key ^ _splitmix64(rows * np.uint64(0x100000001B3) + np.uint64(1)))
        x = _splitmix64(x + cols)
    # top 53 bits -> [0, 1)
    u = (x >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
    return low + (high - low) * u
