"""Small numpy neural-network engine: conv/dense layers, BCE, backprop, SGD.

Tensors are plain ``numpy.ndarray`` objects. Images use channels-last
layout (batch, height, width, channels) and dense weights are stored as
(out_features, in_features).
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import CheckpointMismatch, IoFailure, ShapeMismatch

BCE_EPS = 1e-7


# -- functional ops -----------------------------------------------------------

def same_padding(size: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """Return (out_size, pad_before, pad_after); the extra pad goes after."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return out, total // 2, total - total // 2


def _im2col(x: np.ndarray, k: int, stride: int) -> tuple[np.ndarray, tuple]:
    b, h, w, c = x.shape
    oh, top, bottom = same_padding(h, k, stride)
    ow, left, right = same_padding(w, k, stride)
    xp = np.pad(x, ((0, 0), (top, bottom), (left, right), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    # win: (b, oh, ow, c, k, k)
    cols = np.ascontiguousarray(win).reshape(b * oh * ow, c * k * k)
    return cols, (b, oh, ow, xp.shape, top, left)


def conv2d_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray, stride: int = 1) -> np.ndarray:
    """Same-padded 2-D convolution (cross-correlation).

    ``x`` is (H, W, Cin) or (B, H, W, Cin); ``weights`` is (k, k, Cin, Cout).
    Output spatial size is ceil(in / stride).
    """
    single = x.ndim == 3
    if single:
        x = x[None]
    k, _, cin, cout = weights.shape
    if x.shape[-1] != cin:
        raise ShapeMismatch(f"input has {x.shape[-1]} channels, kernel expects {cin}")
    cols, (b, oh, ow, *_) = _im2col(x.astype(weights.dtype, copy=False), k, stride)
    wm = weights.transpose(2, 0, 1, 3).reshape(cin * k * k, cout)
    out = (cols @ wm + bias).reshape(b, oh, ow, cout)
    return out[0] if single else out


def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    if x.shape[-1] != weights.shape[1]:
        raise ShapeMismatch(f"input width {x.shape[-1]} != weight columns {weights.shape[1]}")
    return x.astype(weights.dtype, copy=False) @ weights.T + bias


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def dropout(x: np.ndarray, keep_prob: float, train: bool, rng: np.random.Generator | None = None):
    """Inverted dropout; identity outside training."""
    if not 0 < keep_prob <= 1:
        raise ValueError("keep_prob must be in (0, 1]")
    if not train or keep_prob == 1:
        return x
    rng = rng if rng is not None else np.random.default_rng()
    mask = (rng.random(x.shape) < keep_prob).astype(x.dtype) / keep_prob
    return x * mask


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_loss(p, y) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy and its gradient with respect to ``p``.

    Each log argument is clamped to at least 1e-7, so p=0 with y=1 costs
    -ln(1e-7) while an exact prediction costs exactly zero.
    """
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    a = np.maximum(p, BCE_EPS)
    b = np.maximum(1.0 - p, BCE_EPS)
    terms = np.zeros_like(p)
    np.subtract(terms, y * np.log(a), out=terms, where=y != 0)
    np.subtract(terms, (1 - y) * np.log(b), out=terms, where=y != 1)
    n = max(p.size, 1)
    grad = (-y / a + (1 - y) / b) / n
    return float(terms.sum() / n), grad


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype=np.float32):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


# -- layers -------------------------------------------------------------------

class Layer:
    kind = "layer"
    attr = 0.0

    def __init__(self):
        self.params: list[np.ndarray] = []
        self.grads: list[np.ndarray] = []

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def output_shape(self, shape: tuple) -> tuple:
        return shape

    @classmethod
    def from_tensors(cls, attr: float, tensors: list[np.ndarray]) -> "Layer":
        return cls()


class Conv2D(Layer):
    kind = "conv2d"

    def __init__(self, weights: np.ndarray, bias: np.ndarray, stride: int = 1, input_grad: bool = True):
        super().__init__()
        if stride < 1:
            raise ValueError("stride must be >= 1")
        if weights.ndim != 4 or weights.shape[0] != weights.shape[1] or bias.shape != (weights.shape[3],):
            raise ShapeMismatch(f"bad conv parameter shapes {weights.shape} / {bias.shape}")
        self.params = [weights, bias]
        self.stride = stride
        self.input_grad = input_grad
        self._cache = None

    @classmethod
    def init(cls, rng, k, cin, cout, stride=1, dtype=np.float32, **kw):
        w = glorot_uniform(rng, (k, k, cin, cout), k * k * cin, k * k * cout, dtype)
        return cls(w, np.zeros(cout, dtype=dtype), stride, **kw)

    @property
    def attr(self):
        return float(self.stride)

    @classmethod
    def from_tensors(cls, attr, tensors):
        return cls(tensors[0], tensors[1], int(attr))

    def forward(self, x, train=False, rng=None):
        w, b = self.params
        k, _, cin, cout = w.shape
        if x.shape[-1] != cin:
            raise ShapeMismatch(f"input has {x.shape[-1]} channels, kernel expects {cin}")
        cols, geom = _im2col(x.astype(w.dtype, copy=False), k, self.stride)
        wm = w.transpose(2, 0, 1, 3).reshape(cin * k * k, cout)
        bsz, oh, ow = geom[:3]
        self._cache = (cols, geom) if train else None
        self._in_hw = x.shape[1:3]
        return (cols @ wm + b).reshape(bsz, oh, ow, cout)

    def backward(self, grad):
        w, _ = self.params
        k, _, cin, cout = w.shape
        cols, (bsz, oh, ow, padded_shape, top, left) = self._cache
        g = grad.reshape(-1, cout)
        dwm = cols.T @ g
        self.grads = [dwm.reshape(cin, k, k, cout).transpose(1, 2, 0, 3), g.sum(axis=0)]
        if not self.input_grad:
            return None
        wm = w.transpose(2, 0, 1, 3).reshape(cin * k * k, cout)
        dcols = (g @ wm.T).reshape(bsz, oh, ow, cin, k, k)
        dxp = np.zeros(padded_shape, dtype=dcols.dtype)
        s = self.stride
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + s * oh:s, j:j + s * ow:s, :] += dcols[..., i, j]
        in_h, in_w = self._in_hw
        return dxp[:, top:top + in_h, left:left + in_w, :]

    def output_shape(self, shape):
        h, w, _ = shape
        k, cout = self.params[0].shape[0], self.params[0].shape[3]
        return (-(-h // self.stride), -(-w // self.stride), cout)


class Dense(Layer):
    kind = "dense"

    def __init__(self, weights: np.ndarray, bias: np.ndarray):
        super().__init__()
        if weights.ndim != 2 or bias.shape != (weights.shape[0],):
            raise ShapeMismatch(f"bad dense parameter shapes {weights.shape} / {bias.shape}")
        self.params = [weights, bias]
        self._x = None

    @classmethod
    def init(cls, rng, n_in, n_out, dtype=np.float32):
        return cls(glorot_uniform(rng, (n_out, n_in), n_in, n_out, dtype), np.zeros(n_out, dtype=dtype))

    @classmethod
    def from_tensors(cls, attr, tensors):
        return cls(tensors[0], tensors[1])

    def forward(self, x, train=False, rng=None):
        w, b = self.params
        x = x.astype(w.dtype, copy=False)
        if x.shape[-1] != w.shape[1]:
            raise ShapeMismatch(f"input width {x.shape[-1]} != weight columns {w.shape[1]}")
        self._x = x if train else None
        return x @ w.T + b

    def backward(self, grad):
        w, _ = self.params
        self.grads = [grad.T @ self._x, grad.sum(axis=0)]
        return grad @ w

    def output_shape(self, shape):
        return (self.params[0].shape[0],)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False, rng=None):
        self._mask = x > 0 if train else None
        return np.maximum(x, 0)

    def backward(self, grad):
        return grad * self._mask


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, keep_prob: float = 0.5):
        super().__init__()
        if not 0 < keep_prob <= 1:
            raise ValueError("keep_prob must be in (0, 1]")
        self.keep_prob = keep_prob
        self._mask = None

    @property
    def attr(self):
        return float(self.keep_prob)

    @classmethod
    def from_tensors(cls, attr, tensors):
        return cls(attr)

    def forward(self, x, train=False, rng=None):
        if not train or self.keep_prob == 1:
            self._mask = None
            return x
        rng = rng if rng is not None else np.random.default_rng()
        self._mask = (rng.random(x.shape) < self.keep_prob).astype(x.dtype) / x.dtype.type(self.keep_prob)
        return x * self._mask

    def backward(self, grad):
        return grad if self._mask is None else grad * self._mask


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, train=False, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)

    def output_shape(self, shape):
        return (int(np.prod(shape)),)


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x, train=False, rng=None):
        out = sigmoid(x).astype(x.dtype, copy=False)
        self._out = out if train else None
        return out

    def backward(self, grad):
        return grad * self._out * (1 - self._out)


LAYER_TYPES: dict[str, type[Layer]] = {}
KIND_TAGS: dict[str, int] = {}


def register_layer(cls: type[Layer], tag: int) -> type[Layer]:
    LAYER_TYPES[cls.kind] = cls
    KIND_TAGS[cls.kind] = tag
    return cls


for _tag, _cls in enumerate((Conv2D, Dense, ReLU, Dropout, Flatten, Sigmoid), 1):
    register_layer(_cls, _tag)


# -- network ------------------------------------------------------------------

class Sequential:
    def __init__(self, layers: Sequence[Layer]):
        self.layers = list(layers)

    def forward(self, x, train=False, rng=None, upto: int | None = None):
        for layer in self.layers[:upto]:
            x = layer.forward(x, train=train, rng=rng)
        return x

    __call__ = forward

    def backward_from(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
            if grad is None:
                break
        return grad

    @property
    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params]

    @property
    def grads(self) -> list[np.ndarray]:
        return [g for layer in self.layers for g in layer.grads]

    def shapes(self, input_shape: tuple) -> list[tuple]:
        out = [tuple(input_shape)]
        for layer in self.layers:
            out.append(tuple(layer.output_shape(out[-1])))
        return out


def backward(network: Sequential, x: np.ndarray, target: np.ndarray, loss: str = "bce",
             rng: np.random.Generator | None = None, train: bool = True) -> tuple[float, list[list[np.ndarray]]]:
    """Forward with recorded activations, then exact reverse-mode gradients.

    ``loss`` is ``"bce"`` (mean binary cross-entropy on a sigmoid output) or
    ``"mse"`` (mean squared error). Returns the loss and per-layer gradients.
    """
    out = network.forward(x, train=train, rng=rng)
    target = np.asarray(target).reshape(out.shape)
    n = out.shape[0]
    if loss == "bce":
        value, dp = bce_loss(out, target)
        last = network.layers[-1]
        if isinstance(last, Sigmoid):
            # d(mean bce)/dz = (p - y)/n for a sigmoid output.
            g = ((out.astype(np.float64) - target) / out.size).astype(out.dtype)
            last.grads = []
            for layer in reversed(network.layers[:-1]):
                g = layer.backward(g)
                if g is None:
                    break
        else:
            network.backward_from(dp.astype(out.dtype))
    elif loss == "mse":
        diff = out.astype(np.float64) - target
        value = float(np.mean(diff ** 2))
        network.backward_from((2 * diff / diff.size).astype(out.dtype))
    else:
        raise ValueError(f"unknown loss {loss!r}")
    return value, [list(layer.grads) for layer in network.layers]


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], lr: float) -> Sequence[np.ndarray]:
    """In-place ``w <- w - lr * g``."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    for p, g in zip(params, grads):
        p -= (lr * g).astype(p.dtype, copy=False)
    return params


class SGD:
    """Mini-batch SGD with optional heavy-ball momentum (0 gives plain SGD)."""

    def __init__(self, params: Sequence[np.ndarray], lr: float = 1e-3, momentum: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self._velocity = [np.zeros_like(p) for p in self.params] if momentum else None

    def step(self, grads: Sequence[np.ndarray]) -> None:
        if self._velocity is None:
            sgd_step(self.params, grads, self.lr)
            return
        for p, v, g in zip(self.params, self._velocity, grads):
            v *= self.momentum
            v += g.astype(v.dtype, copy=False)
            p -= self.lr * v


def canonical_order(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row order that depends only on row content, not on input order."""
    keys = [hashlib.sha256(np.ascontiguousarray(row).tobytes()
                           + np.asarray(t, dtype=np.float64).tobytes()).digest()
            for row, t in zip(x.reshape(len(x), -1), y)]
    return np.array(sorted(range(len(keys)), key=keys.__getitem__), dtype=np.int64)


def fit(network: Sequential, x: np.ndarray, y: np.ndarray, *, loss: str = "bce", epochs: int = 10,
        batch_size: int = 32, lr: float = 1e-3, momentum: float = 0.0, seed: int = 0,
        lr_decay: float = 1.0, on_epoch: Callable[[int, float], None] | None = None,
        batch_transform: Callable | None = None) -> list[float]:
    """Seeded mini-batch training; returns the mean loss of every epoch."""
    order = canonical_order(x, y)
    x, y = x[order], y[order]
    opt = SGD(network.params, lr=lr, momentum=momentum)
    history = []
    for epoch in range(epochs):
        rng = np.random.default_rng([seed, epoch])
        perm = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), batch_size):
            idx = perm[start:start + batch_size]
            xb = x[idx] if batch_transform is None else batch_transform(x[idx], rng)
            value, _ = backward(network, xb, y[idx], loss=loss, rng=rng)
            opt.step(network.grads)
            total += value * len(idx)
        history.append(total / len(x))
        opt.lr *= lr_decay
        if on_epoch is not None:
            on_epoch(epoch, history[-1])
    return history


# -- checkpoints --------------------------------------------------------------

MAGIC = b"RAIDSCK\x00"
VERSION = 1


@dataclass
class ModelCheckpoint:
    """Ordered layer list plus training metadata."""

    network: Sequential
    seed: int = 0
    epochs: int = 0
    final_loss: float = float("nan")
    extra: dict = field(default_factory=dict)

    @property
    def layers(self) -> list[Layer]:
        return self.network.layers


def checkpoint_bytes(ckpt: ModelCheckpoint) -> bytes:
    """Little-endian binary layout.

    Header: 8-byte magic, u16 version, u16 layer count, u64 seed, u32 epochs,
    f64 final loss, u32 length + UTF-8 JSON of extra metadata. Each layer:
    u8 kind tag, f64 attribute (stride or keep_prob), u8 tensor count, then
    per tensor u8 rank, u32 dims, float32 values in row-major order.
    """
    buf = io.BytesIO()
    extra = json.dumps(ckpt.extra, sort_keys=True, separators=(",", ":")).encode()
    buf.write(MAGIC)
    buf.write(struct.pack("<HHQIdI", VERSION, len(ckpt.layers), ckpt.seed & (2**64 - 1),
                          ckpt.epochs, ckpt.final_loss, len(extra)))
    buf.write(extra)
    for layer in ckpt.layers:
        buf.write(struct.pack("<BdB", KIND_TAGS[layer.kind], layer.attr, len(layer.params)))
        for t in layer.params:
            buf.write(struct.pack("<B", t.ndim))
            buf.write(struct.pack(f"<{t.ndim}I", *t.shape))
            buf.write(np.ascontiguousarray(t, dtype="<f4").tobytes())
    return buf.getvalue()


def checkpoint_from_bytes(data: bytes) -> ModelCheckpoint:
    try:
        return _parse_checkpoint(data)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointMismatch(f"corrupt checkpoint: {exc}") from exc


def _parse_checkpoint(data: bytes) -> ModelCheckpoint:
    view = memoryview(data)
    if bytes(view[:8]) != MAGIC:
        raise CheckpointMismatch("not a checkpoint file (bad magic)")
    pos = 8
    version, n_layers, seed, epochs, final_loss, extra_len = struct.unpack_from("<HHQIdI", view, pos)
    if version != VERSION:
        raise CheckpointMismatch(f"unsupported checkpoint version {version}")
    pos += struct.calcsize("<HHQIdI")
    extra = json.loads(bytes(view[pos:pos + extra_len]).decode())
    pos += extra_len
    tags = {v: k for k, v in KIND_TAGS.items()}
    layers = []
    for _ in range(n_layers):
        tag, attr, n_tensors = struct.unpack_from("<BdB", view, pos)
        pos += struct.calcsize("<BdB")
        tensors = []
        for _ in range(n_tensors):
            (ndim,) = struct.unpack_from("<B", view, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", view, pos)
            pos += 4 * ndim
            count = int(np.prod(shape))
            arr = np.frombuffer(view, dtype="<f4", count=count, offset=pos).reshape(shape)
            tensors.append(arr.astype(np.float32))
            pos += 4 * count
        if tag not in tags:
            raise CheckpointMismatch(f"unknown layer tag {tag}")
        layers.append(LAYER_TYPES[tags[tag]].from_tensors(attr, tensors))
    if pos != len(data):
        raise CheckpointMismatch("trailing bytes in checkpoint")
    return ModelCheckpoint(Sequential(layers), seed, epochs, final_loss, extra)


def save_checkpoint(path: str | Path, ckpt: ModelCheckpoint) -> None:
    try:
        Path(path).write_bytes(checkpoint_bytes(ckpt))
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path: str | Path) -> ModelCheckpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read checkpoint {path}: {exc}") from exc
    return checkpoint_from_bytes(data)
