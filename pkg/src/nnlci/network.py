"""Dense tanh network, its two losses, exact backpropagation and Adam.

Weights are stored as ``(n_in, n_out)`` matrices so a batch ``X`` of shape
``(n, n_in)`` maps as ``tanh(X @ W + b)``.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import N_INPUTS, N_VARS, Normalizer, SampleSet

log = logging.getLogger(__name__)

DEFAULT_SIZES = (N_INPUTS,) + (500,) * 10 + (N_VARS,)
LOSS_VARIANTS = ("relative_mse", "cell_weighted")
CHECKPOINT_MAGIC = b"NNLCI-MLP"
CHECKPOINT_VERSION = 1
TANH_GAIN = 5.0 / 3.0


class ShapeError(ValueError):
    pass


class LossError(ArithmeticError):
    pass


class TrainingDiverged(ArithmeticError):
    def __init__(self, epoch: int):
        super().__init__(f"loss became non-finite at epoch {epoch}")
        self.epoch = epoch


class CheckpointError(ValueError):
    pass


@dataclass(eq=False)
class MlpModel:
    weights: list
    biases: list
    normalizer: Normalizer | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias per weight matrix")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"layer {k}: weight {w.shape} and bias {b.shape} disagree")
            if k and w.shape[0] != self.weights[k - 1].shape[1]:
                raise ShapeError(f"layer {k} expects {w.shape[0]} inputs, "
                                 f"previous layer gives {self.weights[k - 1].shape[1]}")

    @property
    def sizes(self) -> tuple:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def params(self) -> list:
        """Weights then biases; the order used for gradients and Adam."""
        return self.weights + self.biases

    @classmethod
    def initialize(cls, sizes=DEFAULT_SIZES, seed: int = 0) -> "MlpModel":
        """Glorot-uniform weights scaled by the tanh gain, zero biases."""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            limit = TANH_GAIN * math.sqrt(6.0 / (n_in + n_out))
            weights.append(rng.uniform(-limit, limit, size=(n_in, n_out)))
            biases.append(np.zeros(n_out))
        return cls(weights, biases, metadata={"init": "glorot_uniform_tanh_gain", "seed": seed})

    def copy(self) -> "MlpModel":
        return MlpModel([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                        self.normalizer, dict(self.metadata))

    def predict(self, raw_inputs: np.ndarray) -> np.ndarray:
        """Raw 202-inputs to raw states through the stored normalizer."""
        if self.normalizer is None:
            raise ValueError("model has no normalizer; train it or attach one")
        x = self.normalizer.normalize_inputs(raw_inputs)
        return self.normalizer.denormalize(forward(self, x))


def forward(model: MlpModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != model.sizes[0]:
        raise ShapeError(f"input has {x.shape[1]} features, model expects {model.sizes[0]}")
    last = len(model.weights) - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        x = x @ w + b
        if k < last:
            np.tanh(x, out=x)
    return x[0] if single else x


@dataclass
class Batch:
    """Normalised inputs and targets plus per-record area weights."""

    x: np.ndarray
    y: np.ndarray
    weights: np.ndarray | None = None

    @classmethod
    def from_samples(cls, samples: SampleSet, normalizer: Normalizer) -> "Batch":
        return cls(normalizer.normalize_inputs(samples.inputs),
                   normalizer.normalize_targets(samples.targets), samples.area_weights.copy())


def _record_weights(batch: Batch, variant: str) -> np.ndarray:
    if variant == "relative_mse":
        return np.ones(len(batch.y))
    if variant == "cell_weighted":
        if batch.weights is None:
            raise LossError("cell_weighted loss needs area weights")
        return np.asarray(batch.weights, dtype=float)
    raise ValueError(f"unknown loss variant {variant!r}; choose from {LOSS_VARIANTS}")


def data_loss(pred: np.ndarray, batch: Batch, variant: str) -> float:
    a = _record_weights(batch, variant)
    if len(batch.y) == 0:
        raise LossError("empty batch")
    den = float(a @ np.sum(batch.y ** 2, axis=1))
    if not den > 0:
        raise LossError("loss denominator is zero (all-zero targets)")
    return float(a @ np.sum((pred - batch.y) ** 2, axis=1)) / den


def loss(model: MlpModel, batch: Batch, variant: str = "cell_weighted", l2: float = 0.0) -> float:
    """Relative (optionally area-weighted) squared error plus ``l2 * sum(W**2)``."""
    value = data_loss(forward(model, batch.x), batch, variant)
    if l2:
        value += l2 * sum(float(np.sum(w * w)) for w in model.weights)
    return value


def backward(model: MlpModel, batch: Batch, variant: str = "cell_weighted", l2: float = 0.0):
    """Loss and its exact gradient for every parameter, ordered as ``model.params``."""
    a = _record_weights(batch, variant)
    x = np.atleast_2d(np.asarray(batch.x, dtype=float))
    if len(batch.y) == 0:
        raise LossError("empty batch")
    den = float(a @ np.sum(batch.y ** 2, axis=1))
    if not den > 0:
        raise LossError("loss denominator is zero (all-zero targets)")

    acts = [x]
    last = len(model.weights) - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = acts[-1] @ w + b
        acts.append(np.tanh(z) if k < last else z)
    err = acts[-1] - batch.y
    value = float(a @ np.sum(err * err, axis=1)) / den

    delta = (2.0 / den) * a[:, None] * err
    gw = [None] * len(model.weights)
    gb = [None] * len(model.weights)
    for k in range(last, -1, -1):
        gw[k] = acts[k].T @ delta
        gb[k] = delta.sum(axis=0)
        if k:
            delta = (delta @ model.weights[k].T) * (1.0 - acts[k] ** 2)
    if l2:
        for k, w in enumerate(model.weights):
            gw[k] += 2.0 * l2 * w
        value += l2 * sum(float(np.sum(w * w)) for w in model.weights)
    return value, gw + gb


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    l2: float = 1e-8
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0

    def init(self, params) -> "AdamState":
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0
        return self


def adam_step(params: list, grads: list, state: AdamState) -> tuple:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if not state.m:
        state.init(params)
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("parameter, gradient and moment lists differ in length")
    for p, g, m in zip(params, grads, state.m):
        if np.shape(p) != np.shape(g) or np.shape(p) != np.shape(m):
            raise ShapeError(f"shape mismatch {np.shape(p)} / {np.shape(g)} / {np.shape(m)}")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


@dataclass
class TrainConfig:
    epochs: int = 50_000
    batch_size: int | None = None
    seed: int = 0
    loss: str = "cell_weighted"
    lr: float = 1e-4
    l2: float = 1e-8
    log_every: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.loss not in LOSS_VARIANTS:
            raise ValueError(f"unknown loss variant {self.loss!r}; choose from {LOSS_VARIANTS}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")


def train(model: MlpModel, batch: Batch, config: TrainConfig | None = None,
          normalizer: Normalizer | None = None):
    """Run the epoch loop. Returns (trained copy of model, loss history).

    The recorded loss of an epoch is the objective evaluated before that
    epoch's update (the last mini-batch's value when batching).
    """
    cfg = config or TrainConfig()
    model = model.copy()
    if normalizer is not None:
        model.normalizer = normalizer
    state = AdamState(lr=cfg.lr, l2=cfg.l2).init(model.params)
    rng = np.random.default_rng(cfg.seed)
    n = len(batch.y)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        if cfg.batch_size is None or cfg.batch_size >= n:
            parts = [batch]
        else:
            order = rng.permutation(n)
            parts = [Batch(batch.x[i], batch.y[i], None if batch.weights is None else batch.weights[i])
                     for i in np.array_split(order, math.ceil(n / cfg.batch_size))]
        for part in parts:
            value, grads = backward(model, part, cfg.loss, cfg.l2)
            if not math.isfinite(value):
                raise TrainingDiverged(epoch)
            adam_step(model.params, grads, state)
        history.append(value)
        if cfg.log_every and epoch % cfg.log_every == 0:
            log.info("epoch %d  loss %.4e", epoch, value)
    model.metadata.update({"epochs": cfg.epochs, "final_loss": history[-1], "seed": cfg.seed,
                           "loss": cfg.loss, "lr": cfg.lr, "l2": cfg.l2,
                           "batch_size": cfg.batch_size})
    return model, history


# -- checkpoints ---------------------------------------------------------------------


def save_checkpoint(model: MlpModel, path) -> None:
    """Binary container: magic, version, JSON header, float64 arrays, sha256.

    The byte stream depends only on the model, so equal models give equal files.
    """
    header = {"sizes": list(model.sizes),
              "normalizer": model.normalizer.to_dict() if model.normalizer else None,
              "metadata": model.metadata}
    hbytes = json.dumps(header, sort_keys=True).encode()
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in model.params)
    payload = CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(hbytes)) + hbytes + body
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload + hashlib.sha256(payload).digest())
    tmp.replace(path)


def load_checkpoint(path) -> MlpModel:
    data = Path(path).read_bytes()
    fixed = len(CHECKPOINT_MAGIC) + 8
    if len(data) < fixed + 32 or not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint or truncated")
    payload, digest = data[:-32], data[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (truncated or corrupt file)")
    version, hlen = struct.unpack("<II", payload[len(CHECKPOINT_MAGIC):fixed])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    header = json.loads(payload[fixed:fixed + hlen])
    sizes = header["sizes"]
    flat = np.frombuffer(payload[fixed + hlen:], dtype="<f8").astype(float)
    shapes = [(a, b) for a, b in zip(sizes[:-1], sizes[1:])] + [(b,) for b in sizes[1:]]
    need = sum(math.prod(s) for s in shapes)
    if flat.size != need:
        raise CheckpointError(f"{path}: {flat.size} parameters stored, {need} expected")
    arrays, pos = [], 0
    for s in shapes:
        k = math.prod(s)
        arrays.append(flat[pos:pos + k].reshape(s))
        pos += k
    nl = len(sizes) - 1
    norm = header.get("normalizer")
    return MlpModel(arrays[:nl], arrays[nl:], Normalizer.from_dict(norm) if norm else None,
                    header.get("metadata", {}))
