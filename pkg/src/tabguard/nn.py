"""Two-hidden-layer ReLU MLP with inverted dropout, trained by Adam on BCE-with-logits.

Everything is float64 numpy. Input gradients are exact per-row backprop,
which is what the attacks consume.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import FormatError, MetricError, ParameterError, ShapeError, TrainingError
from .metrics import auroc

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
PARAM_NAMES = ("W1", "b1", "W2", "b2", "w3", "b3")


@dataclass
class MlpParams:
    W1: np.ndarray  # (h1, d)
    b1: np.ndarray  # (h1,)
    W2: np.ndarray  # (h2, h1)
    b2: np.ndarray  # (h2,)
    w3: np.ndarray  # (h2,)
    b3: float

    def __post_init__(self):
        self.W1 = np.asarray(self.W1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.W2 = np.asarray(self.W2, dtype=np.float64)
        self.b2 = np.asarray(self.b2, dtype=np.float64)
        self.w3 = np.asarray(self.w3, dtype=np.float64)
        self.b3 = float(self.b3)
        h1, d = self.W1.shape
        h2 = self.W2.shape[0]
        if self.b1.shape != (h1,) or self.W2.shape != (h2, h1) or self.b2.shape != (h2,) or self.w3.shape != (h2,):
            raise ShapeError("inconsistent parameter shapes")

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden(self) -> tuple:
        return (self.W1.shape[0], self.W2.shape[0])

    @classmethod
    def zeros(cls, d: int, hidden=(128, 64)) -> "MlpParams":
        h1, h2 = hidden
        return cls(np.zeros((h1, d)), np.zeros(h1), np.zeros((h2, h1)), np.zeros(h2), np.zeros(h2), 0.0)

    @classmethod
    def init(cls, d: int, hidden=(128, 64), rng: Optional[np.random.Generator] = None) -> "MlpParams":
        """He-style uniform fan-in initialization, zero biases."""
        rng = rng if rng is not None else np.random.default_rng(0)
        h1, h2 = hidden

        def he(fan_out, fan_in):
            lim = math.sqrt(6.0 / fan_in)
            return rng.uniform(-lim, lim, size=(fan_out, fan_in))

        W1 = he(h1, d)
        W2 = he(h2, h1)
        w3 = he(1, h2)[0]
        return cls(W1, np.zeros(h1), W2, np.zeros(h2), w3, 0.0)

    def copy(self) -> "MlpParams":
        return MlpParams(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy(), self.w3.copy(), self.b3)

    def arrays(self) -> list:
        return [self.W1, self.b1, self.W2, self.b2, self.w3, np.array([self.b3])]

    def equals(self, other: "MlpParams") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))

    # model protocol used by attacks / explainers
    def predict_proba(self, X) -> np.ndarray:
        return predict_proba(self, X)

    def input_gradient(self, X, y) -> np.ndarray:
        return input_gradient(self, X, y)

    def loss(self, X, y) -> float:
        return loss_bce(forward(self, X)[0], y)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 128
    dropout_p: float = 0.3
    epochs: int = 50
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    hidden: tuple = (128, 64)

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0.0 <= self.dropout_p < 1.0:
            raise ParameterError("dropout_p must lie in [0, 1)")
        if not self.learning_rate > 0.0:
            raise ParameterError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ParameterError("batch_size must be >= 1 and epochs >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class MlpCheckpoint:
    params: MlpParams
    preprocessor: Optional[dict]
    train_config: TrainConfig
    best_val_auroc: float
    best_epoch: int
    schema_fingerprint: Optional[str] = None
    history: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def equals(self, other: "MlpCheckpoint") -> bool:
        return (
            self.params.equals(other.params)
            and self.preprocessor == other.preprocessor
            and asdict(self.train_config) == asdict(other.train_config)
            and _same_float(self.best_val_auroc, other.best_val_auroc)
            and self.best_epoch == other.best_epoch
            and self.schema_fingerprint == other.schema_fingerprint
            and self.history == other.history
            and self.meta == other.meta
        )


def _same_float(a, b) -> bool:
    return (a == b) or (isinstance(a, float) and isinstance(b, float) and math.isnan(a) and math.isnan(b))


def _relu(z):
    return np.maximum(z, 0.0)


def sigmoid(z) -> np.ndarray:
    """Overflow-free logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward(params: MlpParams, X, train_mode: bool = False, rng: Optional[np.random.Generator] = None, dropout_p: float = 0.0):
    """Logits and cached activations.

    In train mode, hidden activations get inverted dropout (kept units scaled
    by 1/(1-p)); ``rng`` is then required.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise ShapeError(f"expected (n, {params.input_dim}) input, got {X.shape}")
    cache = {"X": X}
    z1 = X @ params.W1.T + params.b1
    a1 = _relu(z1)
    if train_mode:
        if rng is None:
            raise ValueError("rng is required in train mode")
        if dropout_p > 0.0:
            m1 = (rng.random(a1.shape) >= dropout_p) / (1.0 - dropout_p)
            a1 = a1 * m1
            cache["m1"] = m1
    z2 = a1 @ params.W2.T + params.b2
    a2 = _relu(z2)
    if train_mode and dropout_p > 0.0:
        m2 = (rng.random(a2.shape) >= dropout_p) / (1.0 - dropout_p)
        a2 = a2 * m2
        cache["m2"] = m2
    logits = a2 @ params.w3 + params.b3
    cache.update(z1=z1, a1=a1, z2=z2, a2=a2)
    return logits, cache


def eval_logits(params: MlpParams, X) -> np.ndarray:
    """Eval-mode logits without the activation cache (in-place, fewer temporaries)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise ShapeError(f"expected (n, {params.input_dim}) input, got {X.shape}")
    h = X @ params.W1.T
    h += params.b1
    np.maximum(h, 0.0, out=h)
    h2 = h @ params.W2.T
    h2 += params.b2
    np.maximum(h2, 0.0, out=h2)
    return h2 @ params.w3 + params.b3


def predict_proba(params: MlpParams, X) -> np.ndarray:
    return sigmoid(eval_logits(params, X))


def _softplus(z):
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def bce_per_row(logits, y) -> np.ndarray:
    """log(1 + exp(-(2y-1) * logit)) per row, stable for large |logit|."""
    logits = np.asarray(logits, dtype=np.float64)
    sgn = 2.0 * np.asarray(y, dtype=np.float64) - 1.0
    return _softplus(-sgn * logits)


def loss_bce(logits, y) -> float:
    return float(np.mean(bce_per_row(logits, y)))


def _backward_to_hidden(params: MlpParams, cache: dict, dlogit: np.ndarray):
    """Gradients w.r.t. parameters and input given dL/dlogit per row."""
    a2 = cache["a2"]
    gw3 = a2.T @ dlogit
    gb3 = float(np.sum(dlogit))
    da2 = np.outer(dlogit, params.w3)
    if "m2" in cache:
        da2 = da2 * cache["m2"]
    dz2 = da2 * (cache["z2"] > 0)
    gW2 = dz2.T @ cache["a1"]
    gb2 = dz2.sum(axis=0)
    da1 = dz2 @ params.W2
    if "m1" in cache:
        da1 = da1 * cache["m1"]
    dz1 = da1 * (cache["z1"] > 0)
    gW1 = dz1.T @ cache["X"]
    gb1 = dz1.sum(axis=0)
    dX = dz1 @ params.W1
    return MlpParams(gW1, gb1, gW2, gb2, gw3, gb3), dX


def loss_and_grads(params: MlpParams, X, y, train_mode: bool = False, rng=None, dropout_p: float = 0.0):
    """Mean BCE over the batch and its parameter gradients."""
    logits, cache = forward(params, X, train_mode, rng, dropout_p)
    y = np.asarray(y, dtype=np.float64)
    loss = loss_bce(logits, y)
    dlogit = (sigmoid(logits) - y) / logits.shape[0]
    grads, _ = _backward_to_hidden(params, cache, dlogit)
    return loss, grads


def input_gradient(params: MlpParams, X, y) -> np.ndarray:
    """Per-row d loss_i / d x_i in eval mode (no averaging across rows)."""
    logits, cache = forward(params, X)
    dlogit = sigmoid(logits) - np.asarray(y, dtype=np.float64)
    _, dX = _backward_to_hidden(params, cache, dlogit)
    return dX


class Adam:
    def __init__(self, params: MlpParams, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(a) for a in params.arrays()]
        self.v = [np.zeros_like(a) for a in params.arrays()]

    def step(self, params: MlpParams, grads: MlpParams) -> MlpParams:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        new = []
        for k, (p, g) in enumerate(zip(params.arrays(), grads.arrays())):
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            new.append(p - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps))
        return MlpParams(new[0], new[1], new[2], new[3], new[4], float(new[5][0]))


# batch_hook(params, X_batch, y_batch, epoch, batch_index, row_index) -> X_batch
BatchHook = Callable[[MlpParams, np.ndarray, np.ndarray, int, int, np.ndarray], np.ndarray]


def _val_auroc(params, X, y) -> float:
    try:
        return auroc(predict_proba(params, X), y)
    except MetricError:
        return float("nan")


def train(
    train_data,
    val_data,
    config: TrainConfig,
    batch_hook: Optional[BatchHook] = None,
    preprocessor: Optional[dict] = None,
    schema_fingerprint: Optional[str] = None,
) -> MlpCheckpoint:
    """Adam on mean BCE; keeps the parameters with the best validation AUROC.

    Epoch 0 is the initialization, so ``epochs=0`` returns the initial
    parameters. ``batch_hook`` may rewrite each batch's inputs before the
    step (adversarial / noisy training); it must not use the training rng.
    """
    X, y = (np.asarray(a) for a in train_data)
    Xv, yv = (np.asarray(a) for a in val_data)
    if Xv.shape[0] == 0:
        raise TrainingError("validation data is empty")
    X = X.astype(np.float64)
    y = y.astype(np.float64)
    rng = np.random.default_rng(config.seed)
    params = MlpParams.init(X.shape[1], config.hidden, rng)
    opt = Adam(params, config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps)

    best_auc = _val_auroc(params, Xv, yv)
    best_params, best_epoch = params.copy(), 0
    history = {"train_loss": [], "val_auroc": [best_auc]}
    n = X.shape[0]
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            Xb, yb = X[idx], y[idx]
            if batch_hook is not None:
                Xb = batch_hook(params, Xb, yb, epoch, b, idx)
            loss, grads = loss_and_grads(params, Xb, yb, True, rng, config.dropout_p)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            params = opt.step(params, grads)
            total += loss * idx.size
            count += idx.size
        history["train_loss"].append(total / count)
        auc = _val_auroc(params, Xv, yv)
        history["val_auroc"].append(auc)
        if auc > best_auc or (math.isnan(best_auc) and not math.isnan(auc)):
            best_auc, best_params, best_epoch = auc, params.copy(), epoch
        logger.debug("epoch %d loss %.6f val_auroc %.6f", epoch, total / count, auc)
    return MlpCheckpoint(
        params=best_params,
        preprocessor=preprocessor,
        train_config=config,
        best_val_auroc=best_auc,
        best_epoch=best_epoch,
        schema_fingerprint=schema_fingerprint,
        history=history,
    )


def _float_or_none(v):
    return None if v is None or (isinstance(v, float) and math.isnan(v)) else v


def checkpoint_to_dict(ckpt: MlpCheckpoint) -> dict:
    p = ckpt.params
    params = {}
    for name, arr in zip(PARAM_NAMES, p.arrays()):
        a = np.asarray(arr, dtype=np.float64)
        if name == "b3":
            params[name] = {"dims": [], "data": [float(p.b3)]}
        else:
            params[name] = {"dims": list(a.shape), "data": a.ravel(order="C").tolist()}
    cfg = asdict(ckpt.train_config)
    cfg["hidden"] = list(cfg["hidden"])
    return {
        "version": CHECKPOINT_VERSION,
        "params": params,
        "preprocessor": ckpt.preprocessor,
        "train_config": cfg,
        "best_val_auroc": _float_or_none(ckpt.best_val_auroc),
        "best_epoch": ckpt.best_epoch,
        "schema_fingerprint": ckpt.schema_fingerprint,
        "history": {k: [_float_or_none(v) for v in vs] for k, vs in ckpt.history.items()},
        "meta": ckpt.meta,
    }


def checkpoint_from_dict(d: dict) -> MlpCheckpoint:
    if not isinstance(d, dict) or "version" not in d:
        raise FormatError("not a checkpoint: missing version")
    if d["version"] != CHECKPOINT_VERSION:
        raise FormatError(f"checkpoint version {d['version']} unsupported (expected {CHECKPOINT_VERSION})")
    try:
        arrays = {}
        for name in PARAM_NAMES:
            entry = d["params"][name]
            data = np.asarray(entry["data"], dtype=np.float64)
            arrays[name] = data.reshape(entry["dims"]) if entry["dims"] else data
        params = MlpParams(
            arrays["W1"], arrays["b1"], arrays["W2"], arrays["b2"], arrays["w3"], float(arrays["b3"][0])
        )
        auc = d["best_val_auroc"]
        hist = {k: [float("nan") if v is None else v for v in vs] for k, vs in d.get("history", {}).items()}
        return MlpCheckpoint(
            params=params,
            preprocessor=d["preprocessor"],
            train_config=TrainConfig.from_dict(d["train_config"]),
            best_val_auroc=float("nan") if auc is None else float(auc),
            best_epoch=int(d["best_epoch"]),
            schema_fingerprint=d.get("schema_fingerprint"),
            history=hist,
            meta=d.get("meta", {}),
        )
    except (KeyError, TypeError, ValueError, ShapeError) as exc:
        raise FormatError(f"malformed checkpoint: {exc}") from None


def save_checkpoint(ckpt: MlpCheckpoint, path) -> None:
    text = json.dumps(checkpoint_to_dict(ckpt), separators=(",", ":"))
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_checkpoint(path) -> MlpCheckpoint:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint ({exc})") from None
    return checkpoint_from_dict(d)


def check_fingerprint(ckpt: MlpCheckpoint, fingerprint: Optional[str]) -> Optional[str]:
    """Warning text when the checkpoint was trained against a different schema."""
    if ckpt.schema_fingerprint is None or fingerprint is None or ckpt.schema_fingerprint == fingerprint:
        return None
    msg = f"schema fingerprint mismatch: checkpoint {ckpt.schema_fingerprint}, data {fingerprint}"
    logger.warning(msg)
    return msg
