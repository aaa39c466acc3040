"""Run configuration: one JSON file of nested key/value sections.

Every field has a default, so an empty ``{}`` file is a valid config. Unknown
keys are rejected to catch typos early.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .codec import SignalSpec
from .errors import ConfigError


@dataclass
class SensorRange:
    name: str
    lo: float
    hi: float


def default_sensor_ranges() -> list[SensorRange]:
    return [
        SensorRange("distance_front", 0.0, 100.0),
        SensorRange("water_level", 0.0, 1.0),
        SensorRange("speed", 0.0, 120.0),
    ]


@dataclass
class SynthConfig:
    n: int = 2000
    seed: int = 7
    night: bool = False
    window: int = 8
    frame_interval_us: int = 20_000
    steering_id: int = 0x0C4
    jitter_sigma: float = 0.01
    curvature_rho: float = 0.9
    offset_rho: float = 0.9
    pixel_noise: float = 10.0
    policy_gain: float = 200.0
    policy_lane_gain: float = 0.2
    policy_clip: float = 2.0


@dataclass
class CnnConfig:
    seed: int = 11
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    momentum: float = 0.0
    lr_decay: float = 1.0
    keep_prob: float = 0.5
    hidden: int = 500
    features: int = 100


@dataclass
class ClassifierConfig:
    seed: int = 13
    epochs: int = 60
    batch_size: int = 32
    lr: float = 1e-3
    momentum: float = 0.0
    lr_decay: float = 1.0
    hidden: int = 64
    threshold: float = 0.5


@dataclass
class BaselineConfig:
    seed: int = 17
    history: int = 8
    hidden: int = 16
    epochs: int = 40
    batch_size: int = 32
    lr: float = 1e-2
    momentum: float = 0.9
    percentile: float = 99.0


@dataclass
class IntrusionConfig:
    seed: int = 23
    select_fraction: float = 0.30
    tail_fraction: float = 0.15
    abrupt_delta: tuple[float, float] = (0.1, 0.9)
    directed_delta: tuple[float, float] = (0.5, 1.0)
    flip_threshold: float = 0.3


@dataclass
class RunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    cnn: CnnConfig = field(default_factory=CnnConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    intrusion: IntrusionConfig = field(default_factory=IntrusionConfig)
    signal: SignalSpec = field(default_factory=SignalSpec)
    sensors: list[SensorRange] = field(default_factory=default_sensor_ranges)
    split_seed: int = 29
    split_mode: str = "random"
    workers: int = 1

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def _build(cls, data: Any, where: str):
    if dataclasses.is_dataclass(cls):
        if not isinstance(data, dict):
            raise ConfigError(f"{where}: expected an object")
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
        kwargs = {}
        hints = {f.name: f.type for f in dataclasses.fields(cls)}
        for name, value in data.items():
            kwargs[name] = _coerce(cls, name, hints[name], value, f"{where}.{name}")
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: {exc}") from exc
    return data


_SECTIONS = {
    "synth": SynthConfig, "cnn": CnnConfig, "classifier": ClassifierConfig,
    "baseline": BaselineConfig, "intrusion": IntrusionConfig, "signal": SignalSpec,
}


def _coerce(owner, name, hint, value, where):
    if owner is RunConfig and name in _SECTIONS:
        return _build(_SECTIONS[name], value, where)
    if owner is RunConfig and name == "sensors":
        return [_build(SensorRange, v, f"{where}[{i}]") for i, v in enumerate(value)]
    if name.endswith("_delta"):
        lo, hi = value
        return (float(lo), float(hi))
    return value


def from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "config")


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return from_dict(data)
