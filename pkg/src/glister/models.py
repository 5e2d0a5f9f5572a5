"""Tiny differentiable classifiers: logistic regression and a 2-layer ReLU MLP.

Losses follow the sum convention: `loss_value` returns the sum of per-sample
losses, never the mean, and gradients match that convention.  Binary margin
losses (logistic, hinge, perceptron) and the squared loss use a single output
column with labels encoded internally as -1/+1 (class 1 maps to +1).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .data import Dataset
from .numerics import SeededRng, log_sum_exp_rows

__all__ = [
    "LossKind",
    "ModelParams",
    "ModelSpec",
    "init_params",
    "forward",
    "loss_value",
    "grad_full",
    "last_layer_per_sample_grads",
    "last_layer_grad_sum",
    "sgd_epoch",
    "hypothesized_labels",
    "accuracy",
    "save_params",
    "load_params",
    "output_width",
    "flatten_grads",
]


class LossKind(str, Enum):
    CROSS_ENTROPY = "cross_entropy"
    LOGISTIC = "logistic"
    SQUARED = "squared"
    HINGE = "hinge"
    PERCEPTRON = "perceptron"


_MARGIN_LOSSES = {LossKind.LOGISTIC, LossKind.SQUARED, LossKind.HINGE, LossKind.PERCEPTRON}


def output_width(kind: LossKind, num_classes: int) -> int:
    """Margin-style losses drive a single score column; cross-entropy one per class."""
    if kind in _MARGIN_LOSSES:
        if num_classes != 2:
            raise ValueError(f"{kind.value} loss requires exactly 2 classes")
        return 1
    return num_classes


@dataclass(frozen=True)
class ModelParams:
    """Ordered (weight, bias) layers; `activation` is 'identity' for a single
    linear layer or 'relu' applied between layers of an MLP."""

    layers: tuple[tuple[np.ndarray, np.ndarray], ...]
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ("identity", "relu"):
            raise ValueError("activation must be 'identity' or 'relu'")
        frozen = []
        prev_out = None
        for w, b in self.layers:
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError("layer shapes do not compose")
            if prev_out is not None and w.shape[0] != prev_out:
                raise ValueError("adjacent layer dimensions do not compose")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("parameters must be finite")
            prev_out = w.shape[1]
            w = w.copy()
            b = b.copy()
            w.flags.writeable = False
            b.flags.writeable = False
            frozen.append((w, b))
        object.__setattr__(self, "layers", tuple(frozen))

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].shape[1]

    @property
    def last_layer_size(self) -> int:
        w, b = self.layers[-1]
        return w.size + b.size

    def last_layer_vector(self) -> np.ndarray:
        w, b = self.layers[-1]
        return np.concatenate([w.ravel(), b])

    def with_last_layer_vector(self, theta: np.ndarray) -> "ModelParams":
        w, b = self.layers[-1]
        w_new = theta[: w.size].reshape(w.shape)
        b_new = theta[w.size:]
        return ModelParams(self.layers[:-1] + ((w_new, b_new),), self.activation)


@dataclass(frozen=True)
class ModelSpec:
    """Architecture knob: 'logistic' is a single linear layer, 'mlp' adds one
    ReLU hidden layer (default width 100)."""

    arch: str = "logistic"
    hidden: int = 100

    def __post_init__(self):
        if self.arch not in ("logistic", "mlp"):
            raise ValueError("arch must be 'logistic' or 'mlp'")

    def layer_dims(self, input_dim: int, out_width: int) -> list[int]:
        if self.arch == "logistic":
            return [input_dim, out_width]
        return [input_dim, self.hidden, out_width]


def init_params(layer_dims: list[int], activation: str, rng: SeededRng) -> ModelParams:
    """Seeded uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] for weights
    and biases alike."""
    layers = []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        w = (rng.uniforms(fan_in * fan_out) * 2.0 - 1.0).reshape(fan_in, fan_out) * bound
        b = (rng.uniforms(fan_out) * 2.0 - 1.0) * bound
        layers.append((w, b))
    if len(layers) == 1:
        activation = "identity"  # no hidden layer, nothing to activate
    return ModelParams(tuple(layers), activation)


def _forward_cached(params: ModelParams, x: np.ndarray):
    """Forward pass keeping pre- and post-activation values for backprop."""
    if x.shape[1] != params.input_dim:
        raise ValueError("input width does not match first layer")
    acts = [x]
    pre = []
    h = x
    for li, (w, b) in enumerate(params.layers):
        z = h @ w + b
        pre.append(z)
        if li < len(params.layers) - 1 and params.activation == "relu":
            h = np.maximum(z, 0.0)
        else:
            h = z
        acts.append(h)
    return pre, acts


def forward(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Logits (no softmax), shape (n, out_dim)."""
    x = np.asarray(x, dtype=np.float64)
    return _forward_cached(params, x)[1][-1]


def _signs(y: np.ndarray) -> np.ndarray:
    return 2.0 * y.astype(np.float64) - 1.0


def _check_labels(y: np.ndarray, kind: LossKind, out_dim: int):
    y = np.asarray(y, dtype=np.int64)
    if kind in _MARGIN_LOSSES:
        if out_dim != 1:
            raise ValueError(f"{kind.value} loss needs a single output column")
        if y.size and (y.min() < 0 or y.max() > 1):
            raise ValueError("margin losses need labels in {0, 1}")
    else:
        if y.size and (y.min() < 0 or y.max() >= out_dim):
            raise ValueError("label out of range")
    return y


def _softplus(v: np.ndarray) -> np.ndarray:
    # log(1 + exp(v)) without overflow for large |v|
    return np.where(v > 0, v + np.log1p(np.exp(-np.abs(v))), np.log1p(np.exp(v)))


def loss_value(params: ModelParams, x: np.ndarray, y: np.ndarray, kind: LossKind) -> float:
    """Sum of per-sample losses on (x, y)."""
    z = forward(params, np.asarray(x, dtype=np.float64))
    y = _check_labels(y, kind, z.shape[1])
    if kind == LossKind.CROSS_ENTROPY:
        lse = log_sum_exp_rows(z)
        return float(np.sum(lse - z[np.arange(len(y)), y]))
    f = z[:, 0]
    s = _signs(y)
    m = s * f
    if kind == LossKind.LOGISTIC:
        return float(np.sum(_softplus(-m)))
    if kind == LossKind.SQUARED:
        return float(np.sum((f - s) ** 2))
    if kind == LossKind.HINGE:
        return float(np.sum(np.maximum(0.0, 1.0 - m)))
    if kind == LossKind.PERCEPTRON:
        return float(np.sum(np.maximum(0.0, -m)))
    raise ValueError(f"unknown loss kind {kind}")


def _logit_grads(z: np.ndarray, y: np.ndarray, kind: LossKind) -> np.ndarray:
    """Per-sample dLoss/dlogits, shape like z."""
    if kind == LossKind.CROSS_ENTROPY:
        shift = z - z.max(axis=1, keepdims=True)
        e = np.exp(shift)
        p = e / e.sum(axis=1, keepdims=True)
        p[np.arange(len(y)), y] -= 1.0
        return p
    f = z[:, 0]
    s = _signs(y)
    m = s * f
    if kind == LossKind.LOGISTIC:
        dm = -1.0 / (1.0 + np.exp(m))  # -sigmoid(-m)
        return (s * dm)[:, None]
    if kind == LossKind.SQUARED:
        return (2.0 * (f - s))[:, None]
    if kind == LossKind.HINGE:
        return (-s * (m < 1.0))[:, None]
    if kind == LossKind.PERCEPTRON:
        return (-s * (m < 0.0))[:, None]
    raise ValueError(f"unknown loss kind {kind}")


def grad_full(params: ModelParams, x: np.ndarray, y: np.ndarray, kind: LossKind):
    """Analytic gradient of `loss_value` w.r.t. every layer; returns a list of
    (dW, db) matching `params.layers`."""
    x = np.asarray(x, dtype=np.float64)
    pre, acts = _forward_cached(params, x)
    y = _check_labels(y, kind, acts[-1].shape[1])
    delta = _logit_grads(acts[-1], y, kind)
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(params.layers)
    for li in range(len(params.layers) - 1, -1, -1):
        h_in = acts[li]
        grads[li] = (h_in.T @ delta, delta.sum(axis=0))
        if li > 0:
            delta = delta @ params.layers[li][0].T
            if params.activation == "relu":
                delta = delta * (pre[li - 1] > 0.0)
    return grads


def flatten_grads(grads) -> np.ndarray:
    return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])


def apply_grads(params: ModelParams, grads, lr: float) -> ModelParams:
    layers = tuple(
        (w - lr * gw, b - lr * gb)
        for (w, b), (gw, gb) in zip(params.layers, grads)
    )
    return ModelParams(layers, params.activation)


def last_layer_per_sample_grads(
    params: ModelParams, x: np.ndarray, y: np.ndarray, kind: LossKind
) -> np.ndarray:
    """One row per sample: the gradient of that sample's loss restricted to
    the final layer, laid out as [W row-major, b]."""
    x = np.asarray(x, dtype=np.float64)
    pre, acts = _forward_cached(params, x)
    y = _check_labels(y, kind, acts[-1].shape[1])
    delta = _logit_grads(acts[-1], y, kind)  # (n, C)
    h = acts[-2]  # penultimate activation, (n, H)
    outer = h[:, :, None] * delta[:, None, :]  # (n, H, C)
    return np.concatenate([outer.reshape(len(y), -1), delta], axis=1)


def last_layer_grad_sum(
    params: ModelParams, x: np.ndarray, y: np.ndarray, kind: LossKind
) -> np.ndarray:
    """Summed last-layer loss gradient as a flat vector [W row-major, b]."""
    gw, gb = grad_full(params, x, y, kind)[-1]
    return np.concatenate([gw.ravel(), gb])


def sgd_epoch(
    params: ModelParams,
    ds: Dataset,
    subset,
    lr: float,
    batch_size: int,
    rng: SeededRng,
    kind: LossKind = LossKind.CROSS_ENTROPY,
) -> ModelParams:
    """One pass of mini-batch SGD over the seeded-shuffled subset.

    Each batch takes a step of lr times the summed batch gradient; the input
    params are left unmodified.
    """
    subset = np.asarray(subset, dtype=np.int64)
    if subset.size == 0:
        raise ValueError("empty subset")
    if lr < 0:
        raise ValueError("learning rate must be nonnegative")
    order = rng.shuffle(subset)
    current = params
    for start in range(0, len(order), batch_size):
        batch = order[start:start + batch_size]
        grads = grad_full(current, ds.features[batch], ds.labels[batch], kind)
        current = apply_grads(current, grads, lr)
    return current


def hypothesized_labels(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Predicted class per row: argmax over logits (single-column margin
    models predict class 1 on strictly positive score).  Ties resolve to the
    lowest class id."""
    z = forward(params, np.asarray(x, dtype=np.float64))
    if z.shape[1] == 1:
        return (z[:, 0] > 0.0).astype(np.int64)
    return np.argmax(z, axis=1).astype(np.int64)


def accuracy(params: ModelParams, ds: Dataset) -> float:
    return float(np.mean(hypothesized_labels(params, ds.features) == ds.labels))


_MAGIC = b"GLMP"
_VERSION = 1
_ACT_CODE = {"identity": 0, "relu": 1}
_ACT_NAME = {v: k for k, v in _ACT_CODE.items()}


def save_params(params: ModelParams) -> bytes:
    """Versioned little-endian binary: magic, version, activation, layer
    count, then per layer the shape and raw float64 data."""
    out = [_MAGIC, struct.pack("<IBI", _VERSION, _ACT_CODE[params.activation], len(params.layers))]
    for w, b in params.layers:
        out.append(struct.pack("<II", w.shape[0], w.shape[1]))
        out.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        out.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(out)


def load_params(blob: bytes) -> ModelParams:
    if blob[:4] != _MAGIC:
        raise ValueError("bad magic")
    version, act, n_layers = struct.unpack_from("<IBI", blob, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported version {version}")
    offset = 4 + struct.calcsize("<IBI")
    layers = []
    for _ in range(n_layers):
        rows, cols = struct.unpack_from("<II", blob, offset)
        offset += 8
        w = np.frombuffer(blob, dtype="<f8", count=rows * cols, offset=offset).reshape(rows, cols)
        offset += 8 * rows * cols
        b = np.frombuffer(blob, dtype="<f8", count=cols, offset=offset)
        offset += 8 * cols
        layers.append((w.copy(), b.copy()))
    return ModelParams(tuple(layers), _ACT_NAME[act])
