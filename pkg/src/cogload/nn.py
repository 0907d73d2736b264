"""The shallow 1D CNN: forward pass, hand-derived gradients, Adam, training.

Architecture (fixed): conv(16 filters, kernel 3) -> ReLU -> conv(8, kernel 3)
-> ReLU -> max pool (window 2, stride 2) -> flatten -> dense(30) -> ReLU ->
dense(2) -> softmax.  Convolutions are valid-padded with stride 1, so a
window of L samples flattens to F = 8 * floor((L - 4) / 2) features.

All layer math is written directly in numpy and differentiated by hand;
computation follows the dtype of the weights (float32 in production,
float64 in the gradient-check tests).
"""

from __future__ import annotations

import json
import logging
import math
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

logger = logging.getLogger(__name__)

KERNEL = 3
CONV1_FILTERS = 16
CONV2_FILTERS = 8
POOL = 2
HIDDEN = 30
CLASSES = 2

WEIGHTS_MAGIC = "cogload-weights"
WEIGHTS_VERSION = 1
_EVAL_CHUNK = 512


class ShapeError(ValueError):
    """Input or file shapes disagree with the architecture arithmetic."""


class ChecksumError(ValueError):
    """A weight file is corrupt or truncated."""


class TrainingDivergedError(RuntimeError):
    """Loss or gradient became non-finite; the run is marked failed."""


def feature_len(window_len_samples: int) -> int:
    """Flattened feature count for an input of ``window_len_samples``."""
    after_convs = window_len_samples - 2 * (KERNEL - 1)
    pooled = after_convs // POOL
    if pooled < 1:
        raise ShapeError(
            f"input of {window_len_samples} samples is too short for the architecture"
        )
    return CONV2_FILTERS * pooled


@dataclass
class WeightsMeta:
    """Provenance carried inside every weight file."""

    window_len_samples: int
    window_len_s: float | None = None
    task: str | None = None
    protocol: str | None = None
    run_id: int | None = None
    fold_id: str | None = None

    def to_dict(self) -> dict:
        return {
            "window_len_samples": self.window_len_samples,
            "window_len_s": self.window_len_s,
            "task": self.task,
            "protocol": self.protocol,
            "run_id": self.run_id,
            "fold_id": self.fold_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WeightsMeta":
        return cls(
            window_len_samples=int(d["window_len_samples"]),
            window_len_s=d.get("window_len_s"),
            task=d.get("task"),
            protocol=d.get("protocol"),
            run_id=d.get("run_id"),
            fold_id=d.get("fold_id"),
        )


@dataclass(eq=False)
class ModelWeights:
    """All parameters of the network plus provenance metadata."""

    conv1_w: np.ndarray  # (16, 1, 3)
    conv1_b: np.ndarray  # (16,)
    conv2_w: np.ndarray  # (8, 16, 3)
    conv2_b: np.ndarray  # (8,)
    fc1_w: np.ndarray  # (30, F)
    fc1_b: np.ndarray  # (30,)
    out_w: np.ndarray  # (2, 30)
    out_b: np.ndarray  # (2,)
    meta: WeightsMeta

    TENSOR_NAMES = (
        "conv1_w", "conv1_b", "conv2_w", "conv2_b",
        "fc1_w", "fc1_b", "out_w", "out_b",
    )

    def tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        for name in self.TENSOR_NAMES:
            yield name, getattr(self, name)

    def copy(self) -> "ModelWeights":
        return ModelWeights(
            **{name: arr.copy() for name, arr in self.tensors()},
            meta=replace(self.meta),
        )

    def validate(self) -> None:
        L = self.meta.window_len_samples
        F = feature_len(L)
        expected = {
            "conv1_w": (CONV1_FILTERS, 1, KERNEL),
            "conv1_b": (CONV1_FILTERS,),
            "conv2_w": (CONV2_FILTERS, CONV1_FILTERS, KERNEL),
            "conv2_b": (CONV2_FILTERS,),
            "fc1_w": (HIDDEN, F),
            "fc1_b": (HIDDEN,),
            "out_w": (CLASSES, HIDDEN),
            "out_b": (CLASSES,),
        }
        for name, arr in self.tensors():
            if arr.shape != expected[name]:
                raise ShapeError(
                    f"{name}: expected shape {expected[name]} for L={L}, got {arr.shape}"
                )
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} contains non-finite values")

    def n_params(self) -> int:
        return sum(arr.size for _, arr in self.tensors())


@dataclass(frozen=True)
class AdamParams:
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7


@dataclass(frozen=True)
class TrainSpec:
    learning_rate: float = 0.001
    max_epochs: int = 200
    patience_epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    adam: AdamParams = field(default_factory=AdamParams)
    restore_best: bool = True

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")
        if self.patience_epochs < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience_epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 0:
            raise ValueError(f"max_epochs must be >= 0, got {self.max_epochs}")


@dataclass(eq=False)
class TrainTrace:
    train_loss: list[float]
    val_loss: list[float]
    best_epoch: int
    stopped_epoch: int


def init_weights(
    window_len_samples: int,
    seed: int,
    *,
    window_len_s: float | None = None,
    task: str | None = None,
    protocol: str | None = None,
    run_id: int | None = None,
    fold_id: str | None = None,
    dtype=np.float32,
) -> ModelWeights:
    """Glorot-uniform weights, zero biases, drawn from ``seed``."""
    F = feature_len(window_len_samples)
    rng = np.random.default_rng(seed)

    def glorot(shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=shape).astype(dtype)

    weights = ModelWeights(
        conv1_w=glorot((CONV1_FILTERS, 1, KERNEL), 1 * KERNEL, CONV1_FILTERS * KERNEL),
        conv1_b=np.zeros(CONV1_FILTERS, dtype=dtype),
        conv2_w=glorot(
            (CONV2_FILTERS, CONV1_FILTERS, KERNEL),
            CONV1_FILTERS * KERNEL,
            CONV2_FILTERS * KERNEL,
        ),
        conv2_b=np.zeros(CONV2_FILTERS, dtype=dtype),
        fc1_w=glorot((HIDDEN, F), F, HIDDEN),
        fc1_b=np.zeros(HIDDEN, dtype=dtype),
        out_w=glorot((CLASSES, HIDDEN), HIDDEN, CLASSES),
        out_b=np.zeros(CLASSES, dtype=dtype),
        meta=WeightsMeta(
            window_len_samples=window_len_samples,
            window_len_s=window_len_s,
            task=task,
            protocol=protocol,
            run_id=run_id,
            fold_id=fold_id,
        ),
    )
    weights.validate()
    return weights


# --- layer primitives ------------------------------------------------------

def _conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    # x: (n, C_in, L); w: (C_out, C_in, K) -> (n, C_out, L - K + 1)
    xs = sliding_window_view(x, w.shape[2], axis=2)  # (n, C_in, L_out, K) view
    y = np.einsum("nclk,ock->nol", xs, w, optimize=True)
    return y + b[None, :, None]


def _conv1d_backward(
    x: np.ndarray, w: np.ndarray, dy: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    k = w.shape[2]
    xs = sliding_window_view(x, k, axis=2)
    dw = np.einsum("nol,nclk->ock", dy, xs, optimize=True)
    db = dy.sum(axis=(0, 2))
    pad = np.zeros(dy.shape[:2] + (k - 1,), dtype=dy.dtype)
    dy_padded = np.concatenate([pad, dy, pad], axis=2)
    dys = sliding_window_view(dy_padded, k, axis=2)  # (n, C_out, L_in, K)
    dx = np.einsum("nolk,ock->ncl", dys, w[:, :, ::-1], optimize=True)
    return dw, db, dx


def maxpool1d(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Max pool window 2 / stride 2; returns (pooled, argmax) for unpooling."""
    n, c, length = x.shape
    pooled_len = length // POOL
    trimmed = x[:, :, : pooled_len * POOL].reshape(n, c, pooled_len, POOL)
    arg = trimmed.argmax(axis=3)
    out = np.take_along_axis(trimmed, arg[..., None], axis=3)[..., 0]
    return out, arg


def _unpool(d_out: np.ndarray, arg: np.ndarray, length: int) -> np.ndarray:
    n, c, pooled_len = d_out.shape
    dx = np.zeros((n, c, length), dtype=d_out.dtype)
    view = dx[:, :, : pooled_len * POOL].reshape(n, c, pooled_len, POOL)
    np.put_along_axis(view, arg[..., None], d_out[..., None], axis=3)
    return dx


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def _check_input(weights: ModelWeights, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch)
    if batch.ndim != 2:
        raise ShapeError(f"batch must be (n, L), got shape {batch.shape}")
    expected = weights.meta.window_len_samples
    if batch.shape[1] != expected:
        raise ShapeError(
            f"model expects windows of {expected} samples, got {batch.shape[1]}"
        )
    return batch


def _forward_cached(weights: ModelWeights, batch: np.ndarray) -> dict:
    x = batch[:, None, :]
    z1 = _conv1d_forward(x, weights.conv1_w, weights.conv1_b)
    a1 = _relu(z1)
    z2 = _conv1d_forward(a1, weights.conv2_w, weights.conv2_b)
    a2 = _relu(z2)
    pooled, arg = maxpool1d(a2)
    flat = pooled.reshape(pooled.shape[0], -1)
    pre_h = flat @ weights.fc1_w.T + weights.fc1_b
    h = _relu(pre_h)
    logits = h @ weights.out_w.T + weights.out_b
    return {
        "x": x, "z1": z1, "a1": a1, "z2": z2, "a2": a2,
        "arg": arg, "flat": flat, "pre_h": pre_h, "h": h, "logits": logits,
    }


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward(weights: ModelWeights, batch: np.ndarray) -> np.ndarray:
    """Class probabilities, one row per input window; rows sum to 1."""
    batch = _check_input(weights, batch)
    if batch.shape[0] == 0:
        return np.empty((0, CLASSES), dtype=batch.dtype)
    out = []
    for start in range(0, batch.shape[0], _EVAL_CHUNK):
        cache = _forward_cached(weights, batch[start : start + _EVAL_CHUNK])
        out.append(np.exp(_log_softmax(cache["logits"])))
    return np.concatenate(out, axis=0)


def _check_labels(labels: np.ndarray, n: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"labels must have shape ({n},), got {labels.shape}")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be binary (0 or 1)")
    return labels.astype(np.int64)


def loss_and_grad(
    weights: ModelWeights, batch: np.ndarray, labels: np.ndarray
) -> tuple[float, ModelWeights]:
    """Mean cross-entropy and its gradient in parameter shapes."""
    batch = _check_input(weights, batch)
    n = batch.shape[0]
    if n == 0:
        raise ValueError("cannot compute loss of an empty batch")
    labels = _check_labels(labels, n)

    cache = _forward_cached(weights, batch)
    log_probs = _log_softmax(cache["logits"])
    loss = float(-log_probs[np.arange(n), labels].mean())
    if not math.isfinite(loss):
        raise TrainingDivergedError(f"non-finite loss: {loss}")

    probs = np.exp(log_probs)
    d_logits = probs
    d_logits[np.arange(n), labels] -= 1.0
    d_logits /= n

    d_out_w = d_logits.T @ cache["h"]
    d_out_b = d_logits.sum(axis=0)
    d_h = d_logits @ weights.out_w
    d_pre_h = d_h * (cache["pre_h"] > 0)
    d_fc1_w = d_pre_h.T @ cache["flat"]
    d_fc1_b = d_pre_h.sum(axis=0)
    d_flat = d_pre_h @ weights.fc1_w
    pooled_len = cache["arg"].shape[2]
    d_pooled = d_flat.reshape(n, CONV2_FILTERS, pooled_len)
    d_a2 = _unpool(d_pooled, cache["arg"], cache["a2"].shape[2])
    d_z2 = d_a2 * (cache["z2"] > 0)
    d_conv2_w, d_conv2_b, d_a1 = _conv1d_backward(cache["a1"], weights.conv2_w, d_z2)
    d_z1 = d_a1 * (cache["z1"] > 0)
    d_conv1_w, d_conv1_b, _ = _conv1d_backward(cache["x"], weights.conv1_w, d_z1)

    grad = ModelWeights(
        conv1_w=d_conv1_w, conv1_b=d_conv1_b,
        conv2_w=d_conv2_w, conv2_b=d_conv2_b,
        fc1_w=d_fc1_w, fc1_b=d_fc1_b,
        out_w=d_out_w, out_b=d_out_b,
        meta=replace(weights.meta),
    )
    return loss, grad


# --- optimizer -------------------------------------------------------------

@dataclass(eq=False)
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def initial(cls, weights: ModelWeights) -> "AdamState":
        return cls(
            m={name: np.zeros_like(arr) for name, arr in weights.tensors()},
            v={name: np.zeros_like(arr) for name, arr in weights.tensors()},
            t=0,
        )


def adam_step(
    weights: ModelWeights,
    grad: ModelWeights,
    state: AdamState,
    spec: TrainSpec,
) -> tuple[ModelWeights, AdamState]:
    """One bias-corrected Adam update; returns fresh weights and state."""
    b1, b2, eps = spec.adam.beta1, spec.adam.beta2, spec.adam.epsilon
    t = state.t + 1
    new_weights = {}
    new_m = {}
    new_v = {}
    for name, w in weights.tensors():
        g = getattr(grad, name)
        if not np.isfinite(g).all():
            raise TrainingDivergedError(f"non-finite gradient in {name}")
        m = b1 * state.m[name] + (1 - b1) * g
        v = b2 * state.v[name] + (1 - b2) * np.square(g)
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_weights[name] = w - spec.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name] = m
        new_v[name] = v
    updated = ModelWeights(**new_weights, meta=replace(weights.meta))
    return updated, AdamState(m=new_m, v=new_v, t=t)


# --- training --------------------------------------------------------------

def evaluate_loss(weights: ModelWeights, batch: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy without gradients, chunked over the batch."""
    batch = _check_input(weights, batch)
    n = batch.shape[0]
    if n == 0:
        raise ValueError("cannot evaluate loss on an empty batch")
    labels = _check_labels(labels, n)
    total = 0.0
    for start in range(0, n, _EVAL_CHUNK):
        chunk = batch[start : start + _EVAL_CHUNK]
        y = labels[start : start + _EVAL_CHUNK]
        log_probs = _log_softmax(_forward_cached(weights, chunk)["logits"])
        total += float(-log_probs[np.arange(len(y)), y].sum())
    loss = total / n
    if not math.isfinite(loss):
        raise TrainingDivergedError(f"non-finite validation loss: {loss}")
    return loss


def predict(weights: ModelWeights, batch: np.ndarray) -> np.ndarray:
    """Hard class labels (argmax of the probabilities)."""
    batch = _check_input(weights, batch)
    if batch.shape[0] == 0:
        return np.empty((0,), dtype=np.int64)
    out = []
    for start in range(0, batch.shape[0], _EVAL_CHUNK):
        cache = _forward_cached(weights, batch[start : start + _EVAL_CHUNK])
        out.append(cache["logits"].argmax(axis=1))
    return np.concatenate(out).astype(np.int64)


def train(
    weights_init: ModelWeights,
    train_batch,
    val_batch,
    spec: TrainSpec,
) -> tuple[ModelWeights, TrainTrace]:
    """Mini-batch Adam with early stopping on validation loss.

    Batches are any objects with ``windows`` / ``labels`` arrays.  Epochs
    shuffle with the spec seed; training stops once validation loss has not
    improved for ``patience_epochs`` epochs, and the best-validation-epoch
    weights are returned (set ``restore_best=False`` to keep the last).
    """
    train_x, train_y = train_batch.windows, train_batch.labels
    val_x, val_y = val_batch.windows, val_batch.labels
    if train_x.shape[0] == 0 or val_x.shape[0] == 0:
        raise ValueError("training and validation batches must be non-empty")
    _check_labels(train_y, train_x.shape[0])

    rng = np.random.default_rng(spec.seed)
    weights = weights_init.copy()
    state = AdamState.initial(weights)
    best_weights = weights.copy()
    best_val = math.inf
    best_epoch = 0
    stopped_epoch = 0
    epochs_since_best = 0
    train_losses: list[float] = []
    val_losses: list[float] = []

    n = train_x.shape[0]
    for epoch in range(1, spec.max_epochs + 1):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, spec.batch_size):
            idx = perm[start : start + spec.batch_size]
            loss, grad = loss_and_grad(weights, train_x[idx], train_y[idx])
            weights, state = adam_step(weights, grad, state, spec)
            epoch_loss += loss * len(idx)
        train_losses.append(epoch_loss / n)
        val_loss = evaluate_loss(weights, val_x, val_y)
        val_losses.append(val_loss)
        stopped_epoch = epoch
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_weights = weights.copy()
            epochs_since_best = 0
        else:
            epochs_since_best += 1
        if epochs_since_best >= spec.patience_epochs:
            break

    trace = TrainTrace(
        train_loss=train_losses,
        val_loss=val_losses,
        best_epoch=best_epoch,
        stopped_epoch=stopped_epoch,
    )
    return (best_weights if spec.restore_best else weights), trace


# --- serialization ---------------------------------------------------------

def save_weights(weights: ModelWeights, path: str | Path) -> None:
    """Write a one-line JSON header followed by little-endian float32 blobs."""
    weights.validate()
    path = Path(path)
    blobs = []
    tensor_headers = []
    offset = 0
    for name, arr in weights.tensors():
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        tensor_headers.append(
            {"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(blob)}
        )
        blobs.append(blob)
        offset += len(blob)
    body = b"".join(blobs)
    header = {
        "format": WEIGHTS_MAGIC,
        "version": WEIGHTS_VERSION,
        "dtype": "<f4",
        "arch": {
            "kernel": KERNEL,
            "conv1_filters": CONV1_FILTERS,
            "conv2_filters": CONV2_FILTERS,
            "pool": POOL,
            "hidden": HIDDEN,
            "classes": CLASSES,
            "feature_len": feature_len(weights.meta.window_len_samples),
        },
        "meta": weights.meta.to_dict(),
        "tensors": tensor_headers,
        "blob_nbytes": len(body),
        "crc32": zlib.crc32(body),
    }
    with path.open("wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(body)


def load_weights(path: str | Path) -> ModelWeights:
    """Read a weight file, verifying length, checksum, and shape arithmetic."""
    path = Path(path)
    raw = path.read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise ChecksumError(f"{path}: missing header line")
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ChecksumError(f"{path}: unreadable header: {exc}") from None
    if header.get("format") != WEIGHTS_MAGIC or header.get("version") != WEIGHTS_VERSION:
        raise ChecksumError(f"{path}: not a {WEIGHTS_MAGIC} v{WEIGHTS_VERSION} file")

    body = raw[newline + 1 :]
    if len(body) != header["blob_nbytes"]:
        raise ChecksumError(
            f"{path}: expected {header['blob_nbytes']} blob bytes, got {len(body)} "
            "(truncated or corrupt file)"
        )
    crc = zlib.crc32(body)
    if crc != header["crc32"]:
        raise ChecksumError(f"{path}: checksum mismatch ({crc} != {header['crc32']})")

    meta = WeightsMeta.from_dict(header["meta"])
    expected_f = feature_len(meta.window_len_samples)
    if header["arch"]["feature_len"] != expected_f:
        raise ShapeError(
            f"{path}: header feature_len {header['arch']['feature_len']} does not "
            f"match window of {meta.window_len_samples} samples (expected {expected_f})"
        )
    arrays = {}
    for t in header["tensors"]:
        blob = body[t["offset"] : t["offset"] + t["nbytes"]]
        arrays[t["name"]] = np.frombuffer(blob, dtype="<f4").reshape(t["shape"]).copy()
    weights = ModelWeights(**arrays, meta=meta)
    weights.validate()
    return weights


def check_window_compatibility(weights: ModelWeights, window_len_samples: int) -> None:
    """Raise when a model trained at a different window length is plugged in."""
    if weights.meta.window_len_samples != window_len_samples:
        raise ShapeError(
            f"model was trained for {weights.meta.window_len_samples}-sample windows, "
            f"pipeline uses {window_len_samples}"
        )
