"""Procedural road scenes with a known steering policy.

A drive is a sequence of scenes whose curvature and lane offset follow
smooth random processes. Each scene is rendered to a 320x160 RGB image and
the steering angle the (intact) driving model would choose is emitted as a
burst of CAN frames.
"""

from __future__ import annotations

import csv
import math
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codec import CanFrame, SignalSpec, encode_frame, write_log
from .config import SynthConfig
from .context import ImageBuffer, SensorSnapshot
from .dataset import DatasetMeta, frame_times, write_meta
from .errors import IoFailure

WIDTH, HEIGHT = 320, 160
MAX_CURVATURE = 0.01
HORIZON_Y = 60

INDEX_COLUMNS = ["record_id", "image_path", "timestamp_us", "genuine_angle"]
SENSOR_COLUMNS = ["record_id", "distance_front", "water_level", "speed"]
SCENE_COLUMNS = ["record_id", "curvature", "lane_offset", "lighting", "horizon_shift", "noise_seed"]


@dataclass(frozen=True)
class SceneParams:
    curvature: float = 0.0
    lane_offset: float = 0.0
    lighting: str = "day"
    noise_seed: int = 0
    horizon_shift: int = 0
    pixel_noise: float = 10.0

    def __post_init__(self):
        if not -MAX_CURVATURE <= self.curvature <= MAX_CURVATURE:
            raise ValueError(f"curvature {self.curvature} outside [-0.01, 0.01]")
        if not -1 <= self.lane_offset <= 1:
            raise ValueError(f"lane_offset {self.lane_offset} outside [-1, 1]")
        if self.lighting not in ("day", "night"):
            raise ValueError("lighting must be 'day' or 'night'")
        if abs(self.horizon_shift) > 20:
            raise ValueError("horizon_shift must be within 20 pixels")


@dataclass(frozen=True)
class GroundTruthPolicy:
    gain: float = 200.0
    lane_gain: float = 0.2
    clip: float = 2.0

    def __post_init__(self):
        if self.gain <= 0:
            raise ValueError("gain must be positive")


def steering_policy(p: SceneParams, policy: GroundTruthPolicy = GroundTruthPolicy()) -> float:
    angle = policy.gain * p.curvature + policy.lane_gain * p.lane_offset
    return float(min(max(angle, -policy.clip), policy.clip))


def _geometry(p: SceneParams):
    """Per-row lane centre, half-width and line thickness for ground rows."""
    horizon = HORIZON_Y + p.horizon_shift
    ys = np.arange(horizon, HEIGHT, dtype=np.float64)
    depth = (HEIGHT - 1 - ys) / (HEIGHT - 1 - horizon)  # 0 at bottom, 1 at horizon
    centre = WIDTH / 2 - 40.0 * p.lane_offset * (1 - depth) + 70.0 * (p.curvature / MAX_CURVATURE) * depth ** 2
    half = 75.0 * (1 - depth) + 4.0 * depth
    thick = 1.0 + 3.0 * (1 - depth)
    return horizon, centre, half, thick


def lane_mask(p: SceneParams) -> np.ndarray:
    """Boolean (160, 320) mask of lane-line pixels."""
    horizon, centre, half, thick = _geometry(p)
    xs = np.arange(WIDTH) + 0.5
    mask = np.zeros((HEIGHT, WIDTH), dtype=bool)
    c, h, t = centre[:, None], half[:, None], thick[:, None]
    mask[horizon:] = (np.abs(xs - (c - h)) < t) | (np.abs(xs - (c + h)) < t)
    return mask


def render_scene(p: SceneParams) -> ImageBuffer:
    horizon, centre, half, thick = _geometry(p)
    xs = np.arange(WIDTH) + 0.5
    img = np.empty((HEIGHT, WIDTH, 3), dtype=np.float64)
    # sky: lighter towards the horizon
    t = (np.arange(horizon) / max(horizon, 1))[:, None]
    img[:horizon] = (np.array([90.0, 130.0, 200.0]) + t * np.array([80.0, 70.0, 40.0]))[:, None, :]
    c, h = centre[:, None], half[:, None]
    on_road = np.abs(xs - c) < h
    ground = np.where(on_road[..., None], np.array([105.0, 105.0, 110.0]), np.array([70.0, 120.0, 60.0]))
    img[horizon:] = ground
    img[lane_mask(p)] = (235.0, 235.0, 225.0)
    if p.lighting == "night":
        img *= 0.25
        yy, xx = np.mgrid[0:HEIGHT, 0:WIDTH]
        beam = 70.0 * np.exp(-((xx + 0.5 - WIDTH / 2) / 80.0) ** 2 - ((HEIGHT - 1 - yy) / 40.0) ** 2)
        beam[:horizon] = 0.0
        img += beam[..., None] * np.array([1.0, 0.95, 0.8])
    rng = np.random.default_rng([p.noise_seed, 0x5CE])
    img += rng.normal(0.0, p.pixel_noise, size=img.shape)
    return ImageBuffer(np.clip(np.rint(img), 0, 255).astype(np.uint8))


def _uniform_process(rng: np.random.Generator, n: int, rho: float) -> np.ndarray:
    """Stationary AR(1) Gaussian mapped through its CDF to uniform [-1, 1]."""
    z = np.empty(n)
    z[0] = rng.standard_normal()
    innov = math.sqrt(1 - rho * rho)
    for i in range(1, n):
        z[i] = rho * z[i - 1] + innov * rng.standard_normal()
    erf = np.vectorize(math.erf)
    return erf(z / math.sqrt(2.0))


@dataclass(frozen=True)
class SyntheticRecord:
    record_id: int
    scene: SceneParams
    sensors: SensorSnapshot
    timestamp_us: int
    genuine_angle: float
    frame_angles: tuple[float, ...]


def plan_drive(cfg: SynthConfig) -> list[SyntheticRecord]:
    """Scene parameters, sensors and frame values for ``cfg.n`` records.

    Lighting does not touch the random streams, so a night drive and a day
    drive with the same seed share geometry, sensors and frames.
    """
    if cfg.n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng([cfg.seed, 0xD21E])
    curv = MAX_CURVATURE * _uniform_process(rng, cfg.n, cfg.curvature_rho)
    offs = _uniform_process(rng, cfg.n, cfg.offset_rho)
    water = 0.5 * (1 + _uniform_process(rng, cfg.n, 0.98))
    policy = GroundTruthPolicy(cfg.policy_gain, cfg.policy_lane_gain, cfg.policy_clip)
    period = cfg.window * cfg.frame_interval_us
    records = []
    for i in range(cfg.n):
        r = np.random.default_rng([cfg.seed, 0x5EC, i])
        scene = SceneParams(
            curvature=float(curv[i]), lane_offset=float(offs[i]),
            lighting="night" if cfg.night else "day",
            noise_seed=int(r.integers(0, 2**63)), horizon_shift=int(r.integers(-8, 9)),
            pixel_noise=cfg.pixel_noise,
        )
        angle = steering_policy(scene, policy)
        speed = 70.0 - 25.0 * abs(scene.curvature) / MAX_CURVATURE + r.normal(0.0, 2.0)
        sensors = SensorSnapshot(
            distance_front=round(float(r.uniform(5.0, 95.0)), 3),
            water_level=round(float(water[i]), 4),
            speed=round(float(min(max(speed, 0.0), 120.0)), 3),
        )
        jitter = np.clip(r.normal(0.0, cfg.jitter_sigma, cfg.window), -3 * cfg.jitter_sigma, 3 * cfg.jitter_sigma)
        records.append(SyntheticRecord(i, scene, sensors, (i + 1) * period, angle,
                                       tuple(float(angle + j) for j in jitter)))
    return records


def record_frames(rec: SyntheticRecord, cfg: SynthConfig, signal: SignalSpec) -> list[CanFrame]:
    times = frame_times(rec.timestamp_us, cfg.window, cfg.frame_interval_us)
    lo, hi = signal.physical_range()
    return [encode_frame(min(max(v, lo), hi), signal, can_id=cfg.steering_id, timestamp_us=t)
            for v, t in zip(rec.frame_angles, times)]


def write_dataset(out_dir: str | Path, records: list[SyntheticRecord], frames: list[CanFrame],
                  images: list[ImageBuffer], meta: DatasetMeta) -> Path:
    out = Path(out_dir)
    try:
        if out.exists():
            shutil.rmtree(out)
        (out / "images").mkdir(parents=True)
        with open(out / "index.csv", "w", newline="", encoding="utf-8") as fi, \
                open(out / "sensors.csv", "w", newline="", encoding="utf-8") as fs, \
                open(out / "scenes.csv", "w", newline="", encoding="utf-8") as fc:
            wi, ws, wc = csv.writer(fi, lineterminator="\n"), csv.writer(fs, lineterminator="\n"), \
                csv.writer(fc, lineterminator="\n")
            wi.writerow(INDEX_COLUMNS)
            ws.writerow(SENSOR_COLUMNS)
            wc.writerow(SCENE_COLUMNS)
            for rec, img in zip(records, images):
                rel = f"images/{rec.record_id:06d}.png"
                img.save(out / rel)
                wi.writerow([rec.record_id, rel, rec.timestamp_us, f"{rec.genuine_angle:.6f}"])
                s = rec.sensors
                ws.writerow([rec.record_id, repr(s.distance_front), repr(s.water_level), repr(s.speed)])
                sc = rec.scene
                wc.writerow([rec.record_id, repr(sc.curvature), repr(sc.lane_offset), sc.lighting,
                             sc.horizon_shift, sc.noise_seed])
        write_log(out / "frames.log", frames)
        write_meta(out, meta)
    except OSError as exc:
        raise IoFailure(f"cannot write dataset to {out}: {exc}") from exc
    return out


def generate_dataset(n: int, cfg: SynthConfig, out_dir: str | Path, signal: SignalSpec = SignalSpec()) -> Path:
    """Render ``n`` records into the on-disk dataset layout.

    Layout: ``images/NNNNNN.png``, ``frames.log``, ``sensors.csv``,
    ``index.csv`` (record_id, image_path, timestamp_us, genuine_angle) and
    ``scenes.csv`` with the generating parameters.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    cfg = SynthConfig(**{**cfg.__dict__, "n": n})
    records = plan_drive(cfg)
    frames = [f for rec in records for f in record_frames(rec, cfg, signal)]
    images = [render_scene(rec.scene) for rec in records]
    meta = DatasetMeta(cfg.window, cfg.frame_interval_us, cfg.steering_id, signal)
    return write_dataset(out_dir, records, frames, images, meta)
