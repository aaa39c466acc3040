"""Stage 2: binary classifier over (road context, frame window)."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ClassifierConfig
from .errors import CheckpointMismatch, DimensionMismatch, SingleClassDataset
from .nn import Dense, ModelCheckpoint, ReLU, Sequential, Sigmoid, canonical_order, fit

log = logging.getLogger(__name__)

NORMAL, INTRUSION = "normal", "intrusion"


@dataclass(frozen=True)
class LabeledTuple:
    r: np.ndarray
    c: np.ndarray
    label: int  # 0 normal, 1 intrusion


@dataclass
class ClassifierParams:
    """Two dense layers with a ReLU between and a sigmoid output."""

    checkpoint: ModelCheckpoint

    @property
    def threshold(self) -> float:
        return float(self.checkpoint.extra.get("threshold", 0.5))

    @property
    def r_len(self) -> int:
        return int(self.checkpoint.extra["r_len"])

    @property
    def c_len(self) -> int:
        return int(self.checkpoint.extra["c_len"])

    @property
    def network(self) -> Sequential:
        return self.checkpoint.network

    @classmethod
    def from_checkpoint(cls, ckpt: ModelCheckpoint) -> "ClassifierParams":
        kinds = tuple(layer.kind for layer in ckpt.layers)
        if kinds != ("dense", "relu", "dense", "sigmoid") or "r_len" not in ckpt.extra:
            raise CheckpointMismatch(f"not a classifier checkpoint: {kinds}")
        return cls(ckpt)


def label_for(score: float, threshold: float) -> str:
    # ties count as intrusions (fail-safe)
    return INTRUSION if score >= threshold else NORMAL


def scores(x: np.ndarray, params: ClassifierParams) -> np.ndarray:
    if x.shape[-1] != params.r_len + params.c_len:
        raise DimensionMismatch(f"input width {x.shape[-1]} != {params.r_len} + {params.c_len}")
    return params.network.forward(x, train=False).astype(np.float64).ravel()


def classify(r: np.ndarray, c: np.ndarray, params: ClassifierParams) -> tuple[float, str]:
    """Score one (context, window) pair; returns (score, label)."""
    r, c = np.asarray(r, dtype=np.float64).ravel(), np.asarray(c, dtype=np.float64).ravel()
    if len(r) != params.r_len or len(c) != params.c_len:
        raise DimensionMismatch(f"got r[{len(r)}], c[{len(c)}]; expected r[{params.r_len}], c[{params.c_len}]")
    score = float(scores(np.concatenate([r, c])[None], params)[0])
    return score, label_for(score, params.threshold)


def stack(dataset: Sequence[LabeledTuple]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([np.concatenate([np.ravel(t.r), np.ravel(t.c)]) for t in dataset]).astype(np.float64)
    y = np.array([t.label for t in dataset], dtype=np.float64)
    return x, y


def train_classifier(dataset: Sequence[LabeledTuple], cfg: ClassifierConfig,
                     log_path: str | Path | None = None) -> ClassifierParams:
    """Fit the classifier by mini-batch SGD on mean BCE.

    Inputs are standardized during training; the scaling is folded into the
    first layer afterwards so the stored network consumes raw [r || c].
    """
    if not dataset:
        raise SingleClassDataset("empty training set")
    labels = {int(t.label) for t in dataset}
    if labels != {0, 1}:
        raise SingleClassDataset(f"training set has only class(es) {sorted(labels)}")
    r_len, c_len = len(np.ravel(dataset[0].r)), len(np.ravel(dataset[0].c))
    x, y = stack(dataset)
    # content order, so the statistics do not depend on input order
    order = canonical_order(x, y)
    x, y = x[order], y[order]
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std < 1e-8] = 1.0
    xs = (x - mean) / std

    rng = np.random.default_rng(cfg.seed)
    net = Sequential([Dense.init(rng, x.shape[1], cfg.hidden, np.float64), ReLU(),
                      Dense.init(rng, cfg.hidden, 1, np.float64), Sigmoid()])
    rows = []

    def on_epoch(epoch, loss):
        acc = float(np.mean((net.forward(xs).ravel() >= cfg.threshold) == (y == 1)))
        rows.append((epoch, loss, acc))
        log.debug("classifier epoch %d loss %.5f acc %.4f", epoch, loss, acc)

    history = fit(net, xs, y.reshape(-1, 1), loss="bce", epochs=cfg.epochs, batch_size=cfg.batch_size,
                  lr=cfg.lr, momentum=cfg.momentum, lr_decay=cfg.lr_decay, seed=cfg.seed, on_epoch=on_epoch)

    d1, _, d2, _ = net.layers
    w1, b1 = d1.params
    folded_w = w1 / std
    folded_b = b1 - folded_w @ mean
    final = Sequential([Dense(folded_w.astype(np.float32), folded_b.astype(np.float32)), ReLU(),
                        Dense(d2.params[0].astype(np.float32), d2.params[1].astype(np.float32)), Sigmoid()])
    if log_path is not None:
        write_training_log(log_path, rows)
    ckpt = ModelCheckpoint(final, seed=cfg.seed, epochs=cfg.epochs,
                           final_loss=history[-1] if history else float("nan"),
                           extra={"role": "classifier", "threshold": cfg.threshold, "r_len": r_len,
                                  "c_len": c_len, "history": history})
    return ClassifierParams(ckpt)


def write_training_log(path: str | Path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "train_acc"])
        for epoch, loss, acc in rows:
            w.writerow([epoch, f"{loss:.8f}", f"{acc:.6f}"])
