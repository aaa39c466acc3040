"""Stage 1: camera image + numeric sensors -> road-context vector."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from PIL import Image

from .config import CnnConfig, SensorRange
from .errors import CheckpointMismatch, ImageTooSmall, SensorOutOfRange
from .nn import Conv2D, Dense, Dropout, Flatten, ModelCheckpoint, ReLU, Sequential, fit

log = logging.getLogger(__name__)

INPUT_SIZE = 100
FEATURES = 100
# Layer kinds of the feature extractor, before the training head.
TOPOLOGY = ("conv2d", "relu", "conv2d", "relu", "dropout", "flatten", "dense", "relu", "dense")


@dataclass(frozen=True)
class ImageBuffer:
    """8-bit RGB image, row-major, shape (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = self.pixels
        if px.dtype != np.uint8 or px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"expected (h, w, 3) uint8 pixels, got {px.dtype} {px.shape}")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def open(cls, path) -> "ImageBuffer":
        with Image.open(path) as im:
            return cls(np.asarray(im.convert("RGB"), dtype=np.uint8).copy())

    def save(self, path) -> None:
        Image.fromarray(self.pixels, "RGB").save(path, format="PNG")


@dataclass(frozen=True)
class SensorSnapshot:
    distance_front: float | None = None
    water_level: float | None = None
    speed: float | None = None
    extra: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for name, value in self.items():
            if not math.isfinite(value):
                raise SensorOutOfRange(f"{name} is not finite")
        if self.distance_front is not None and self.distance_front < 0:
            raise SensorOutOfRange("distance_front must be >= 0")
        if self.water_level is not None and not 0 <= self.water_level <= 1:
            raise SensorOutOfRange("water_level must be in [0, 1]")
        if self.speed is not None and self.speed < 0:
            raise SensorOutOfRange("speed must be >= 0")

    def items(self):
        for name in ("distance_front", "water_level", "speed"):
            value = getattr(self, name)
            if value is not None:
                yield name, float(value)
        yield from ((k, float(v)) for k, v in self.extra.items())

    def get(self, name: str) -> float:
        for key, value in self.items():
            if key == name:
                return value
        raise SensorOutOfRange(f"sensor {name!r} missing from snapshot")


def preprocess_image(img: ImageBuffer, channel_mean: Sequence[float] = (0.0, 0.0, 0.0)) -> np.ndarray:
    """Center-crop to a square, bilinear-resize to 100x100, scale to [0, 1]
    and subtract the per-channel mean. Returns float32 (100, 100, 3)."""
    h, w = img.height, img.width
    if h < INPUT_SIZE or w < INPUT_SIZE:
        raise ImageTooSmall(f"image {w}x{h} is smaller than {INPUT_SIZE}x{INPUT_SIZE}")
    side = min(h, w)
    top, left = (h - side) // 2, (w - side) // 2
    crop = img.pixels[top:top + side, left:left + side]
    if side != INPUT_SIZE:
        crop = np.asarray(Image.fromarray(crop, "RGB").resize((INPUT_SIZE, INPUT_SIZE), Image.BILINEAR))
    out = crop.astype(np.float32) / np.float32(255.0)
    return out - np.asarray(channel_mean, dtype=np.float32)


def channel_mean(images: np.ndarray) -> list[float]:
    """Per-channel mean of un-centered preprocessed images (N, 100, 100, 3)."""
    return [float(v) for v in images.reshape(-1, 3).astype(np.float64).mean(axis=0)]


def build_cnn(seed: int, cfg: CnnConfig | None = None, with_head: bool = True) -> Sequential:
    cfg = cfg or CnnConfig()
    rng = np.random.default_rng(seed)
    layers = [
        Conv2D.init(rng, 3, 3, 24, stride=2, input_grad=False),
        ReLU(),
        Conv2D.init(rng, 3, 24, 64, stride=2),
        ReLU(),
        Dropout(cfg.keep_prob),
        Flatten(),
        Dense.init(rng, 25 * 25 * 64, cfg.hidden),
        ReLU(),
        Dense.init(rng, cfg.hidden, cfg.features),
    ]
    if with_head:
        # Steering regression head used only while training.
        layers.append(Dense.init(rng, cfg.features, 1))
    return Sequential(layers)


def check_topology(ckpt: ModelCheckpoint) -> None:
    kinds = tuple(layer.kind for layer in ckpt.layers[:len(TOPOLOGY)])
    if kinds != TOPOLOGY:
        raise CheckpointMismatch(f"unexpected CNN layers {kinds}")
    shapes = ckpt.network.shapes((INPUT_SIZE, INPUT_SIZE, 3))
    if shapes[len(TOPOLOGY)] != (FEATURES,):
        raise CheckpointMismatch(f"feature layer emits {shapes[len(TOPOLOGY)]}, expected ({FEATURES},)")
    if len(ckpt.extra.get("channel_mean", ())) != 3:
        raise CheckpointMismatch("checkpoint lacks the per-channel image mean")


def extract_features(t: np.ndarray, cnn: ModelCheckpoint) -> np.ndarray:
    """Eval-mode forward pass up to the 100-wide feature layer.

    Accepts a single (100, 100, 3) tensor or a batch (B, 100, 100, 3).
    """
    single = t.ndim == 3
    batch = t[None] if single else t
    if batch.shape[1:] != (INPUT_SIZE, INPUT_SIZE, 3):
        raise CheckpointMismatch(f"input shape {batch.shape[1:]} does not fit the CNN")
    out = cnn.network.forward(batch, train=False, upto=len(TOPOLOGY))
    if out.shape[-1] != FEATURES:
        raise CheckpointMismatch(f"CNN emits {out.shape[-1]} features, expected {FEATURES}")
    return out[0] if single else out


def extract_batched(tensors: np.ndarray, cnn: ModelCheckpoint, batch_size: int = 64) -> np.ndarray:
    return np.concatenate([extract_features(tensors[i:i + batch_size], cnn)
                           for i in range(0, len(tensors), batch_size)]) if len(tensors) else \
        np.zeros((0, FEATURES), dtype=np.float32)


def build_context_vector(features: np.ndarray, sensors: SensorSnapshot | None,
                         ranges: Sequence[SensorRange] = ()) -> np.ndarray:
    """Concatenate features with min-max normalized sensor readings.

    Sensor order follows ``ranges``; an empty ``ranges`` yields the features.
    """
    values = []
    for rng in ranges:
        v = sensors.get(rng.name) if sensors is not None else None
        if v is None:
            raise SensorOutOfRange(f"sensor {rng.name!r} missing")
        if not rng.lo <= v <= rng.hi:
            raise SensorOutOfRange(f"{rng.name}={v} outside [{rng.lo}, {rng.hi}]")
        values.append((v - rng.lo) / (rng.hi - rng.lo))
    feats = np.asarray(features, dtype=np.float64).ravel()
    return np.concatenate([feats, np.asarray(values, dtype=np.float64)])


def train_cnn(images: np.ndarray, angles: np.ndarray, cfg: CnnConfig, on_epoch=None) -> ModelCheckpoint:
    """Train the feature extractor end to end on steering regression.

    ``images`` are un-centered preprocessed tensors (N, 100, 100, 3); the
    per-channel mean is computed here and stored in the checkpoint.
    """
    mean = channel_mean(images)
    x = images - np.asarray(mean, dtype=np.float32)
    y = np.asarray(angles, dtype=np.float32).reshape(-1, 1)
    net = build_cnn(cfg.seed, cfg)

    def report(epoch, loss):
        log.info("cnn epoch %d mse %.5f", epoch, loss)
        if on_epoch:
            on_epoch(epoch, loss)

    history = fit(net, x, y, loss="mse", epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr,
                  momentum=cfg.momentum, seed=cfg.seed, lr_decay=cfg.lr_decay, on_epoch=report)
    return ModelCheckpoint(net, seed=cfg.seed, epochs=cfg.epochs,
                           final_loss=history[-1] if history else float("nan"),
                           extra={"channel_mean": mean, "role": "cnn", "history": history})
