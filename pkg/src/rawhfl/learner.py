"""Fully connected next-request predictor trained with plain numpy SGD.

Architecture: FC(C, 512) -> ReLU -> FC(512, 256) -> ReLU -> FC(256, C). All
parameters live in one flat float64 vector so that accumulated gradients,
edge models and global models are ordinary array arithmetic.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .content import ProcessedSample, samples_to_arrays

HIDDEN = (512, 256)
_MAGIC = b"RWHF"
_VERSION = 1

Batch = Union[Sequence[ProcessedSample], tuple]


def layer_sizes(num_items: int) -> tuple[int, ...]:
    return (num_items, *HIDDEN, num_items)


def num_params(num_items: int) -> int:
    sizes = layer_sizes(num_items)
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


@dataclass
class ModelParams:
    num_items: int
    vector: np.ndarray

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if self.vector.shape != (num_params(self.num_items),):
            raise ValueError(
                f"expected {num_params(self.num_items)} parameters, got {self.vector.shape}")

    @property
    def dim(self) -> int:
        return self.vector.size

    def copy(self) -> "ModelParams":
        return ModelParams(self.num_items, self.vector.copy())

    def layers(self, vector: np.ndarray | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
        """(weight, bias) views into ``vector`` (defaults to the model's own)."""
        return _unpack(self.vector if vector is None else vector, self.num_items)


@dataclass
class GradAccumulator:
    vector: np.ndarray
    steps_taken: int = 0


def _unpack(vec: np.ndarray, num_items: int) -> list[tuple[np.ndarray, np.ndarray]]:
    out = []
    pos = 0
    sizes = layer_sizes(num_items)
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = vec[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = vec[pos:pos + fan_out]
        pos += fan_out
        out.append((w, b))
    return out


def init_model(num_items: int, seed: int | np.random.Generator | None = 0) -> ModelParams:
    if num_items < 2:
        raise ValueError(f"need at least 2 classes, got {num_items}")
    rng = np.random.default_rng(seed)
    vec = np.empty(num_params(num_items))
    for w, b in _unpack(vec, num_items):
        bound = 1.0 / np.sqrt(w.shape[0])
        w[...] = rng.uniform(-bound, bound, size=w.shape)
        b[...] = rng.uniform(-bound, bound, size=b.shape)
    return ModelParams(num_items, vec)


def _as_arrays(batch: Batch) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(batch, tuple) and len(batch) == 2 and isinstance(batch[0], np.ndarray):
        return batch
    return samples_to_arrays(list(batch))


def _forward_unique(model: ModelParams, vec: np.ndarray, x_unique: np.ndarray):
    (w1, b1), (w2, b2), (w3, b3) = _unpack(vec, model.num_items)
    # one-hot inputs: the first layer is a row lookup
    z1 = w1[x_unique] + b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ w2 + b2
    a2 = np.maximum(z2, 0.0)
    logits = a2 @ w3 + b3
    return z1, a1, z2, a2, logits


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_grad_arrays(model: ModelParams, x: np.ndarray, y: np.ndarray,
                         vec: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient for index-encoded samples."""
    if x.size == 0:
        raise ValueError("empty batch")
    vec = model.vector if vec is None else vec
    n = x.size
    ux, inv = np.unique(x, return_inverse=True)
    counts = np.bincount(inv, minlength=ux.size).astype(np.float64)
    label_counts = np.zeros((ux.size, model.num_items))
    np.add.at(label_counts, (inv, y), 1.0)

    z1, a1, z2, a2, logits = _forward_unique(model, vec, ux)
    logp = _log_softmax(logits)
    loss = -float((label_counts * logp).sum()) / n

    # identical inputs share activations, so their logit gradients add up
    dlogits = (counts[:, None] * np.exp(logp) - label_counts) / n
    grad = np.zeros_like(vec)
    (gw1, gb1), (gw2, gb2), (gw3, gb3) = _unpack(grad, model.num_items)
    (_, _), (w2, _), (w3, _) = _unpack(vec, model.num_items)
    gw3[...] = a2.T @ dlogits
    gb3[...] = dlogits.sum(axis=0)
    dz2 = (dlogits @ w3.T) * (z2 > 0.0)
    gw2[...] = a1.T @ dz2
    gb2[...] = dz2.sum(axis=0)
    dz1 = (dz2 @ w2.T) * (z1 > 0.0)
    gw1[ux] = dz1
    gb1[...] = dz1.sum(axis=0)
    return loss, grad


def loss_and_grad(model: ModelParams, batch: Batch) -> tuple[float, np.ndarray]:
    x, y = _as_arrays(batch)
    return loss_and_grad_arrays(model, x, y)


def mean_loss(model: ModelParams, batch: Batch) -> float:
    x, y = _as_arrays(batch)
    if x.size == 0:
        raise ValueError("empty batch")
    ux, inv = np.unique(x, return_inverse=True)
    logp = _log_softmax(_forward_unique(model, model.vector, ux)[-1])
    return -float(logp[inv, y].mean())


def logits(model: ModelParams, x: np.ndarray) -> np.ndarray:
    ux, inv = np.unique(np.asarray(x, dtype=np.int64), return_inverse=True)
    return _forward_unique(model, model.vector, ux)[-1][inv]


def local_sgd(model_in: ModelParams, dataset: Batch, rounds: int, lr: float,
              minibatches: int, batch_size: int, rng: np.random.Generator
              ) -> tuple[ModelParams, GradAccumulator, list[float]]:
    """Run ``rounds`` local SGD steps.

    Each step draws ``minibatches`` mini-batches of ``batch_size`` samples with
    replacement and applies their mean gradient once. Returns the updated
    model, the sum of applied gradients and each step's squared gradient norm.
    """
    if rounds < 1:
        raise ValueError(f"local rounds must be >= 1, got {rounds}")
    x, y = _as_arrays(dataset)
    if x.size == 0:
        raise ValueError("empty dataset")
    w = model_in.vector.copy()
    acc = np.zeros_like(w)
    sq_norms = []
    draw = minibatches * batch_size
    for _ in range(rounds):
        idx = rng.integers(0, x.size, size=draw)
        # equal-size mini-batches: the mean of batch means is the pooled mean
        _, g = loss_and_grad_arrays(model_in, x[idx], y[idx], vec=w)
        w -= lr * g
        acc += g
        sq_norms.append(float(g @ g))
    return ModelParams(model_in.num_items, w), GradAccumulator(acc, rounds), sq_norms


def top_m_accuracy(model: ModelParams, dataset: Batch, m: int) -> float:
    if m < 1:
        raise ValueError(f"M must be >= 1, got {m}")
    x, y = _as_arrays(dataset)
    if x.size == 0:
        raise ValueError("empty dataset")
    return top_m_from_logits(logits(model, x), y, m)


def top_m_from_logits(scores: np.ndarray, labels: np.ndarray, m: int) -> float:
    return float(top_m_hits(scores, labels, m).mean())


def top_m_hits(scores: np.ndarray, labels: np.ndarray, m: int) -> np.ndarray:
    """Per-sample hit flags; ties between equal scores go to the lower class ID."""
    labels = np.asarray(labels)
    own = scores[np.arange(labels.size), labels][:, None]
    cls = np.arange(scores.shape[1])[None, :]
    ahead = (scores > own) | ((scores == own) & (cls < labels[:, None]))
    return ahead.sum(axis=1) < m


def save_checkpoint(path, model: ModelParams, round_index: int) -> None:
    """Little-endian float32 dump with a (C, layer sizes, round) header."""
    sizes = layer_sizes(model.num_items)
    header = struct.pack("<4sIII" + "I" * len(sizes) + "I", _MAGIC, _VERSION,
                         model.num_items, len(sizes), *sizes, round_index)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(model.vector.astype("<f4").tobytes())


def load_checkpoint(path) -> tuple[ModelParams, int]:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, num_items, n_sizes = struct.unpack_from("<4sIII", raw, 0)
    if magic != _MAGIC or version != _VERSION:
        raise ValueError(f"not a checkpoint file: {path}")
    off = struct.calcsize("<4sIII")
    sizes = struct.unpack_from("<" + "I" * n_sizes, raw, off)
    off += 4 * n_sizes
    (round_index,) = struct.unpack_from("<I", raw, off)
    off += 4
    if tuple(sizes) != layer_sizes(num_items):
        raise ValueError(f"unsupported layer sizes {sizes}")
    vec = np.frombuffer(raw, dtype="<f4", offset=off).astype(np.float64)
    return ModelParams(num_items, vec), round_index
