"""Dense feed-forward classifier with flat float64 parameters.

The whole model lives in a single 1-D array so that agents can mix,
checkpoint and compare parameter vectors directly.  Layout is layer by
layer, each weight matrix in row-major order followed by its bias.
Hidden activations are ReLU, the loss is softmax cross-entropy.
"""

import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .seeding import make_rng

CHECKPOINT_MAGIC = b"CGAP"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sIQ")  # magic, version, parameter count


class Batch(NamedTuple):
    inputs: np.ndarray  # (b, dim) float64
    labels: np.ndarray  # (b,) integer class ids


@dataclass(frozen=True)
class ModelSpec:
    """Layer sizes from input width to class count, e.g. (16, 64, 32, 10)."""

    layer_sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2:
            raise ValueError(f"need at least input and output layers, got {sizes}")
        if any(s < 1 for s in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]


def layer_shapes(spec: ModelSpec) -> list[tuple[int, int]]:
    sizes = spec.layer_sizes
    return [(sizes[i], sizes[i + 1]) for i in range(len(sizes) - 1)]


def param_count(spec: ModelSpec) -> int:
    """Total flat length: sum over layers of (fan_in + 1) * fan_out."""
    return sum((fi + 1) * fo for fi, fo in layer_shapes(spec))


def init_params(spec: ModelSpec, seed: int) -> np.ndarray:
    """Glorot-uniform weights, zero biases, deterministic in seed."""
    rng = make_rng(seed)
    parts = []
    for fan_in, fan_out in layer_shapes(spec):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        parts.append(w.ravel())
        parts.append(np.zeros(fan_out))
    return np.concatenate(parts)


def unflatten(spec: ModelSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views (no copies) of the flat vector as (W, b) pairs per layer."""
    params = np.asarray(params)
    if params.shape != (param_count(spec),):
        raise ValueError(
            f"params has shape {params.shape}, expected ({param_count(spec)},)")
    layers = []
    offset = 0
    for fan_in, fan_out in layer_shapes(spec):
        w = params[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = params[offset:offset + fan_out]
        offset += fan_out
        layers.append((w, b))
    return layers


def _check_batch(spec: ModelSpec, batch: Batch) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(batch.inputs, dtype=np.float64)
    y = np.asarray(batch.labels)
    if x.ndim != 2 or x.shape[1] != spec.n_inputs:
        raise ValueError(f"inputs shape {x.shape} does not match {spec.n_inputs} features")
    if x.shape[0] == 0:
        raise ValueError("batch is empty")
    if not np.isfinite(x).all():
        raise ValueError("batch inputs contain non-finite values")
    if y.shape != (x.shape[0],) or not np.issubdtype(y.dtype, np.integer):
        raise ValueError("labels must be a 1-D integer array matching the batch size")
    if y.min() < 0 or y.max() >= spec.n_classes:
        raise ValueError(f"labels must lie in [0, {spec.n_classes})")
    return x, y


def predict_logits(spec: ModelSpec, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    layers = unflatten(spec, params)
    for w, b in layers[:-1]:
        x = np.maximum(x @ w + b, 0.0)
    w, b = layers[-1]
    return x @ w + b


def loss_and_grad(spec: ModelSpec, params: np.ndarray, batch: Batch) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its flat gradient."""
    x, y = _check_batch(spec, batch)
    params = np.asarray(params, dtype=np.float64)
    if not np.isfinite(params).all():
        raise ValueError("params contain non-finite values")
    layers = unflatten(spec, params)
    b_size = x.shape[0]

    acts = [x]
    pre = []
    for w, b in layers[:-1]:
        z = acts[-1] @ w + b
        pre.append(z)
        acts.append(np.maximum(z, 0.0))
    w_out, b_out = layers[-1]
    logits = acts[-1] @ w_out + b_out

    shift = logits.max(axis=1, keepdims=True)
    lse = shift + np.log(np.exp(logits - shift).sum(axis=1, keepdims=True))
    loss = float(np.mean(lse[:, 0] - logits[np.arange(b_size), y]))

    dlogits = np.exp(logits - lse)
    dlogits[np.arange(b_size), y] -= 1.0
    dlogits /= b_size

    grads = [None] * len(layers)
    grads[-1] = (acts[-1].T @ dlogits, dlogits.sum(axis=0))
    dh = dlogits @ w_out.T
    for i in range(len(layers) - 2, -1, -1):
        dz = dh * (pre[i] > 0.0)
        grads[i] = (acts[i].T @ dz, dz.sum(axis=0))
        if i > 0:
            dh = dz @ layers[i][0].T

    flat = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])
    return loss, flat


def predict_accuracy(spec: ModelSpec, params: np.ndarray, batch: Batch) -> float:
    """Fraction of the batch classified correctly (argmax of logits)."""
    x, y = _check_batch(spec, batch)
    pred = predict_logits(spec, params, x).argmax(axis=1)
    return float(np.mean(pred == y))


def save_params(path, params: np.ndarray) -> None:
    """Write a flat parameter vector with a 16-byte header."""
    params = np.ascontiguousarray(params, dtype=np.float64)
    if params.ndim != 1:
        raise ValueError(f"params must be 1-D, got shape {params.shape}")
    header = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, params.shape[0])
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(params.astype("<f8").tobytes())


def load_params(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"checkpoint {path} too short for a header")
    magic, version, count = _HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"checkpoint {path} has bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint {path} has unsupported version {version}")
    body = raw[_HEADER.size:]
    if len(body) != 8 * count:
        raise ValueError(
            f"checkpoint {path} payload is {len(body)} bytes, expected {8 * count}")
    return np.frombuffer(body, dtype="<f8").astype(np.float64)
