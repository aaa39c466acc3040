"""Forgery attacks on steering-angle values: abrupt and directed intrusions.

Randomness is keyed by (seed, record index), so the forged value of a record
does not depend on the order records are processed in.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .codec import CanFrame, SignalSpec, pack_signal, unpack_signal
from .errors import EmptyDataset, IoFailure

_SELECT, _DELTA = 0x5E1EC7, 0xDE17A


@dataclass(frozen=True)
class IntrusionSpec:
    kind: str = "abrupt"
    select_fraction: float = 0.30
    tail_fraction: float = 0.15
    delta_range: tuple[float, float] | None = None
    flip_threshold: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("abrupt", "directed"):
            raise ValueError(f"unknown intrusion kind {self.kind!r}")
        if self.delta_range is None:
            object.__setattr__(self, "delta_range", (0.1, 0.9) if self.kind == "abrupt" else (0.5, 1.0))
        lo, hi = self.delta_range
        if not (0 < self.select_fraction < 1 and 0 < self.tail_fraction < 1):
            raise ValueError("fractions must lie in (0, 1)")
        if not (lo < hi and hi > 0 and lo >= 0):
            raise ValueError(f"bad delta range {self.delta_range}")


@dataclass(frozen=True)
class ManipulationRecord:
    index: int
    original: float
    forged: float
    rule: str  # "offset" or "flip"


def _count(fraction: float, n: int) -> int:
    return int(math.floor(fraction * n + 1e-9))


def _keyed(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed & (2**64 - 1), stream, index])


def _offset(a: float, lo: float, hi: float, seed: int, index: int) -> float:
    r = _keyed(seed, _DELTA, index)
    delta = r.uniform(lo, hi)
    sign = 1.0 if r.random() < 0.5 else -1.0
    return a + sign * delta


def inject_abrupt(angles: Sequence[float], spec: IntrusionSpec) -> tuple[list[float], list[ManipulationRecord]]:
    """Add or subtract a random delta to a random subset of the angles."""
    n = len(angles)
    if n == 0:
        raise EmptyDataset("no angles to manipulate")
    k = _count(spec.select_fraction, n)
    priority = [(_keyed(spec.seed, _SELECT, i).random(), i) for i in range(n)]
    chosen = sorted(i for _, i in sorted(priority)[:k])
    out = [float(a) for a in angles]
    lo, hi = spec.delta_range
    records = []
    for i in chosen:
        forged = _offset(out[i], lo, hi, spec.seed, i)
        records.append(ManipulationRecord(i, out[i], forged, "offset"))
        out[i] = forged
    return out, records


def directed_selection(angles: Sequence[float], tail_fraction: float) -> list[int]:
    """Indices of the largest and smallest tails; ties go to the lower index."""
    n = len(angles)
    t = _count(tail_fraction, n)
    low = sorted(range(n), key=lambda i: (angles[i], i))[:t]
    high = sorted(range(n), key=lambda i: (-angles[i], i))[:t]
    return sorted(set(low) | set(high))


def inject_directed(angles: Sequence[float], spec: IntrusionSpec) -> tuple[list[float], list[ManipulationRecord]]:
    """Flip extreme angles; nudge the ones too small to flip."""
    if len(angles) == 0:
        raise EmptyDataset("no angles to manipulate")
    out = [float(a) for a in angles]
    lo, hi = spec.delta_range
    records = []
    for i in directed_selection(out, spec.tail_fraction):
        a = out[i]
        if abs(a) > spec.flip_threshold:
            forged, rule = -a, "flip"
        else:
            forged, rule = _offset(a, lo, hi, spec.seed, i), "offset"
        records.append(ManipulationRecord(i, a, forged, rule))
        out[i] = forged
    return out, records


def inject(angles: Sequence[float], spec: IntrusionSpec):
    return (inject_abrupt if spec.kind == "abrupt" else inject_directed)(angles, spec)


def forge_record(angle: float, spec: IntrusionSpec, index: int) -> tuple[float, str]:
    """Forge one record with the per-record rule of ``spec.kind``.

    Used to build balanced training sets, where every record gets a forged
    twin regardless of selection.
    """
    lo, hi = spec.delta_range
    if spec.kind == "directed" and abs(angle) > spec.flip_threshold:
        return -angle, "flip"
    return _offset(angle, lo, hi, spec.seed, index), "offset"


def labels_from(manipulations: Iterable[ManipulationRecord], n: int) -> np.ndarray:
    y = np.zeros(n, dtype=np.int64)
    for m in manipulations:
        y[m.index] = 1
    return y


def forge_frames(frames: Sequence[CanFrame], shift: float, signal: SignalSpec) -> list[CanFrame]:
    """Shift every frame's signal by ``shift`` keeping id, timing and length."""
    out = []
    for f in frames:
        _, data = pack_signal(unpack_signal(f, signal) + shift, signal, f.data)
        out.append(CanFrame(f.id, data, f.timestamp_us, f.bus))
    return out


def write_audit(path: str | Path, manipulations: Iterable[ManipulationRecord]) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "original", "forged", "rule"])
            for m in manipulations:
                w.writerow([m.index, f"{m.original:.6f}", f"{m.forged:.6f}", m.rule])
    except OSError as exc:
        raise IoFailure(f"cannot write audit {path}: {exc}") from exc


def read_audit(path: str | Path) -> list[ManipulationRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [ManipulationRecord(int(r["index"]), float(r["original"]), float(r["forged"]), r["rule"])
                for r in csv.DictReader(fh)]
