"""History-only detector: a recurrent next-angle predictor with an error threshold.

It sees nothing but past steering angles, which is what separates it from
the road-context pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import BaselineConfig
from .errors import CheckpointMismatch, DimensionMismatch, SequenceTooShort
from .nn import Layer, ModelCheckpoint, Sequential, fit, glorot_uniform, register_layer

TAU_FLOOR = 1e-6


class RecurrentCell(Layer):
    """Single-layer tanh recurrence over a (batch, steps, 1) window with a
    linear read-out of the final hidden state."""

    kind = "recurrent"

    def __init__(self, wx, wh, b, wo, bo):
        super().__init__()
        self.params = [wx, wh, b, wo, bo]

    @classmethod
    def init(cls, rng, hidden: int, dtype=np.float64):
        return cls(glorot_uniform(rng, (hidden, 1), 1, hidden, dtype),
                   glorot_uniform(rng, (hidden, hidden), hidden, hidden, dtype),
                   np.zeros(hidden, dtype=dtype),
                   glorot_uniform(rng, (1, hidden), hidden, 1, dtype),
                   np.zeros(1, dtype=dtype))

    @classmethod
    def from_tensors(cls, attr, tensors):
        return cls(*tensors)

    def forward(self, x, train=False, rng=None):
        wx, wh, b, wo, bo = self.params
        x = x.astype(wx.dtype, copy=False)
        h = np.zeros((x.shape[0], wh.shape[0]), dtype=wx.dtype)
        hs = [h]
        for t in range(x.shape[1]):
            h = np.tanh(x[:, t, :] @ wx.T + h @ wh.T + b)
            hs.append(h)
        if train:
            self._x, self._hs = x, hs
        return h @ wo.T + bo

    def backward(self, grad):
        wx, wh, b, wo, bo = self.params
        x, hs = self._x, self._hs
        dwx, dwh, db = np.zeros_like(wx), np.zeros_like(wh), np.zeros_like(b)
        dwo, dbo = grad.T @ hs[-1], grad.sum(axis=0)
        dh = grad @ wo
        dx = np.zeros_like(x)
        for t in range(x.shape[1], 0, -1):
            da = dh * (1 - hs[t] ** 2)
            dwx += da.T @ x[:, t - 1, :]
            dwh += da.T @ hs[t - 1]
            db += da.sum(axis=0)
            dx[:, t - 1, :] = da @ wx
            dh = da @ wh
        self.grads = [dwx, dwh, db, dwo, dbo]
        return dx

    def output_shape(self, shape):
        return (1,)


register_layer(RecurrentCell, 7)


@dataclass
class PredictorParams:
    checkpoint: ModelCheckpoint

    @property
    def history(self) -> int:
        return int(self.checkpoint.extra["history"])

    @property
    def tau(self) -> float:
        return float(self.checkpoint.extra["tau"])

    @property
    def mean(self) -> float:
        return float(self.checkpoint.extra["mean"])

    @property
    def std(self) -> float:
        return float(self.checkpoint.extra["std"])

    @classmethod
    def from_checkpoint(cls, ckpt: ModelCheckpoint) -> "PredictorParams":
        if [layer.kind for layer in ckpt.layers] != ["recurrent"] or "tau" not in ckpt.extra:
            raise CheckpointMismatch("not a baseline predictor checkpoint")
        return cls(ckpt)

    def predict(self, histories: np.ndarray) -> np.ndarray:
        h = np.asarray(histories, dtype=np.float64)
        if h.ndim == 1:
            h = h[None]
        if h.shape[1] != self.history:
            raise DimensionMismatch(f"history of {h.shape[1]} angles, predictor expects {self.history}")
        z = ((h - self.mean) / self.std)[..., None]
        out = self.checkpoint.network.forward(z).astype(np.float64).ravel()
        return out * self.std + self.mean


def windows(sequence: Sequence[float], history: int) -> tuple[np.ndarray, np.ndarray]:
    seq = np.asarray(sequence, dtype=np.float64)
    if len(seq) <= history:
        return np.zeros((0, history)), np.zeros(0)
    idx = np.arange(history)[None, :] + np.arange(len(seq) - history)[:, None]
    return seq[idx], seq[history:]


def train_baseline(sequences: Sequence[Sequence[float]], cfg: BaselineConfig,
                   targets_mask: Sequence[Sequence[bool]] | None = None) -> PredictorParams:
    """Fit a next-step predictor on genuine angle sequences (MSE).

    ``targets_mask`` optionally restricts which positions may serve as
    prediction targets (e.g. only training-split records). The anomaly
    threshold is the configured percentile of training absolute errors.
    """
    xs, ys = [], []
    for k, seq in enumerate(sequences):
        x, y = windows(seq, cfg.history)
        if targets_mask is not None:
            keep = np.asarray(targets_mask[k], dtype=bool)[cfg.history:]
            x, y = x[keep], y[keep]
        xs.append(x)
        ys.append(y)
    x = np.concatenate(xs) if xs else np.zeros((0, cfg.history))
    y = np.concatenate(ys) if ys else np.zeros(0)
    if len(y) == 0:
        raise SequenceTooShort(f"no sequence is longer than the history of {cfg.history}")
    mean = float(np.mean(np.concatenate([x.ravel(), y])))
    std = float(np.std(np.concatenate([x.ravel(), y])))
    std = std if std > 1e-12 else 1.0
    rng = np.random.default_rng(cfg.seed)
    net = Sequential([RecurrentCell.init(rng, cfg.hidden)])
    history = fit(net, ((x - mean) / std)[..., None], ((y - mean) / std)[:, None], loss="mse",
                  epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr, momentum=cfg.momentum, seed=cfg.seed)
    for layer in net.layers:
        layer.params = [p.astype(np.float32) for p in layer.params]
    params = PredictorParams(ModelCheckpoint(net, seed=cfg.seed, epochs=cfg.epochs,
                                             final_loss=history[-1] if history else float("nan"),
                                             extra={"role": "baseline", "history": cfg.history,
                                                    "mean": mean, "std": std, "tau": 1.0}))
    errors = np.abs(params.predict(x) - y)
    params.checkpoint.extra["tau"] = max(float(np.percentile(errors, cfg.percentile)), TAU_FLOOR)
    return params


def score_frame(history: Sequence[float], next_angle: float, params: PredictorParams) -> tuple[float, str]:
    """Absolute prediction error and the resulting label."""
    error = float(abs(params.predict(np.asarray(history))[0] - next_angle))
    return error, ("intrusion" if error > params.tau else "normal")


def score_sequence(sequence: Sequence[float], params: PredictorParams) -> np.ndarray:
    """Prediction error for every position; the first positions use a
    history padded with the first value."""
    seq = np.asarray(sequence, dtype=np.float64)
    h = params.history
    padded = np.concatenate([np.full(h, seq[0]), seq])
    idx = np.arange(h)[None, :] + np.arange(len(seq))[:, None]
    return np.abs(params.predict(padded[idx]) - seq)
