"""Load, split and align dataset records; import external driving logs."""

from __future__ import annotations

import bisect
import csv
import json
import math
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .codec import STEERING_ID, CanFrame, SignalSpec, encode_frame, read_log, unpack_signal, write_log
from .context import ImageBuffer, SensorSnapshot
from .errors import IoFailure, MalformedLine, MisalignedFrames, MissingImage, SchemaError, TooFewRecords

META_FILE = "dataset.json"
AUDIT_FILE = "manipulations.csv"
_KNOWN_SENSORS = ("distance_front", "water_level", "speed")


@dataclass
class Record:
    id: int
    image_path: Path
    timestamp_us: int
    genuine_angle: float
    sensors: SensorSnapshot
    frames: list[CanFrame] = field(default_factory=list)
    label: int = 0

    def window(self, signal: SignalSpec) -> np.ndarray:
        """Decoded steering values of this record's frames, most recent last."""
        return np.array([unpack_signal(f, signal) for f in self.frames], dtype=np.float64)

    def observed_angle(self, signal: SignalSpec) -> float:
        return float(self.window(signal).mean()) if self.frames else self.genuine_angle


@dataclass(frozen=True)
class Split:
    train: tuple[int, ...]
    test: tuple[int, ...]


@dataclass(frozen=True)
class DatasetMeta:
    window: int = 8
    frame_interval_us: int = 20_000
    steering_id: int = STEERING_ID
    signal: SignalSpec = field(default_factory=SignalSpec)

    def to_json(self) -> str:
        d = {"window": self.window, "frame_interval_us": self.frame_interval_us,
             "steering_id": self.steering_id, "signal": self.signal.__dict__}
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    @classmethod
    def read(cls, directory: str | Path) -> "DatasetMeta":
        path = Path(directory) / META_FILE
        if not path.exists():
            return cls()
        d = json.loads(path.read_text(encoding="utf-8"))
        return cls(d["window"], d["frame_interval_us"], d["steering_id"], SignalSpec(**d["signal"]))


def _read_csv(path: Path, required: Sequence[str]) -> list[dict[str, str]]:
    if not path.exists():
        raise SchemaError(f"missing {path.name}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in required if c not in (reader.fieldnames or ())]
        if missing:
            raise SchemaError(f"{path.name}: missing column(s) {', '.join(missing)}")
        return list(reader)


def _sensor_snapshot(row: dict[str, str], rowno: int) -> SensorSnapshot:
    known, extra = {}, {}
    for key, value in row.items():
        if key == "record_id" or value in ("", None):
            continue
        try:
            v = float(value)
        except ValueError:
            raise SchemaError(f"sensors.csv row {rowno}: {key}={value!r} is not a number", row=rowno)
        (known if key in _KNOWN_SENSORS else extra)[key] = v
    return SensorSnapshot(**known, extra=extra)


def load_dataset(directory: str | Path, meta: DatasetMeta | None = None) -> list[Record]:
    """Read a dataset directory into records sorted by timestamp.

    Every steering frame is assigned to the record with the nearest image
    timestamp; a frame further than half a window from every image raises
    MISALIGNED_FRAMES.
    """
    root = Path(directory)
    meta = meta or DatasetMeta.read(root)
    index = _read_csv(root / "index.csv", ["record_id", "image_path", "timestamp_us", "genuine_angle"])
    sensor_rows = _read_csv(root / "sensors.csv", ["record_id"])
    sensors = {}
    for rowno, row in enumerate(sensor_rows, 2):
        try:
            sensors[int(row["record_id"])] = _sensor_snapshot(row, rowno)
        except ValueError:
            raise SchemaError(f"sensors.csv row {rowno}: bad record_id", row=rowno)

    records = []
    for rowno, row in enumerate(index, 2):
        try:
            rid = int(row["record_id"])
            rec = Record(rid, root / row["image_path"], int(row["timestamp_us"]),
                         float(row["genuine_angle"]), sensors.get(rid, SensorSnapshot()))
        except (TypeError, ValueError):
            raise SchemaError(f"index.csv row {rowno}: malformed values", row=rowno)
        if not rec.image_path.is_file():
            raise MissingImage(f"record {rid}: image {row['image_path']} not found", record_id=rid)
        records.append(rec)
    records.sort(key=lambda r: (r.timestamp_us, r.id))

    audit = root / AUDIT_FILE
    if audit.exists():
        forged = {int(r["index"]) for r in _read_csv(audit, ["index"])}
        for rec in records:
            rec.label = int(rec.id in forged)

    try:
        frames = [f for f in read_log(root / "frames.log") if f.id == meta.steering_id]
    except OSError as exc:
        raise SchemaError(f"cannot read frames.log: {exc}") from exc
    except MalformedLine as exc:
        raise SchemaError(f"frames.log line {exc.context.get('line_number')}: {exc}") from exc
    frames.sort(key=lambda f: (f.timestamp_us, f.data))
    _assign(records, frames, meta)
    return records


def _assign(records: list[Record], frames: list[CanFrame], meta: DatasetMeta) -> None:
    if not records:
        if frames:
            raise MisalignedFrames("frames present but no images")
        return
    stamps = [r.timestamp_us for r in records]
    half = meta.window * meta.frame_interval_us / 2
    for f in frames:
        j = bisect.bisect_left(stamps, f.timestamp_us)
        candidates = [k for k in (j - 1, j) if 0 <= k < len(records)]
        k = min(candidates, key=lambda c: (abs(stamps[c] - f.timestamp_us), c))
        if abs(stamps[k] - f.timestamp_us) > half:
            raise MisalignedFrames(f"frame at {f.timestamp_us} us is not within half a window of any image")
        records[k].frames.append(f)


def split_70_30(record_ids: Sequence[int], seed: int, mode: str = "random", train_fraction: float = 0.7) -> Split:
    """Seeded shuffle then prefix split; ``mode="chronological"`` keeps order."""
    ids = list(record_ids)
    n = len(ids)
    if n < 2:
        raise TooFewRecords(f"need at least 2 records, got {n}")
    if mode == "random":
        ids = [ids[i] for i in np.random.default_rng([seed, 0x5917]).permutation(n)]
    elif mode != "chronological":
        raise ValueError(f"unknown split mode {mode!r}")
    k = int(math.floor(train_fraction * n + 1e-9))
    return Split(tuple(ids[:k]), tuple(ids[k:]))


def frame_times(record_ts: int, window: int, interval_us: int) -> list[int]:
    """Frame timestamps centred on the image timestamp."""
    return [int(record_ts + round((k - (window - 1) / 2) * interval_us)) for k in range(window)]


def write_meta(directory: str | Path, meta: DatasetMeta) -> None:
    (Path(directory) / META_FILE).write_text(meta.to_json(), encoding="utf-8")


def import_external_csv(path: str | Path, schema: dict, out_dir: str | Path, meta: DatasetMeta | None = None) -> Path:
    """Convert a driving-log CSV (timestamp, image file, steering angle) into
    the internal layout.

    ``schema`` keys: ``timestamp``, ``image``, ``angle`` (column names,
    required); ``unit`` (``radian`` or ``degree``); ``timestamp_unit``
    (``s``, ``ms``, ``us`` or ``ns``); ``image_root`` (defaults to the CSV's
    directory); ``sensors`` (mapping of sensor name to column name).
    """
    src = Path(path)
    meta = meta or DatasetMeta()
    cols = {k: schema.get(k) for k in ("timestamp", "image", "angle")}
    for key, col in cols.items():
        if not col:
            raise SchemaError(f"schema does not name the {key} column")
    unit = schema.get("unit", "radian")
    factor = {"radian": 1.0, "rad": 1.0, "degree": math.pi / 180, "deg": math.pi / 180}.get(unit)
    if factor is None:
        raise SchemaError(f"unknown angle unit {unit!r}")
    ts_scale = {"s": 1_000_000, "ms": 1_000, "us": 1, "ns": 1e-3}[schema.get("timestamp_unit", "s")]
    image_root = Path(schema.get("image_root") or src.parent)
    sensor_cols = dict(schema.get("sensors", {}))

    rows = _read_csv(src, [*cols.values(), *sensor_cols.values()])
    if not rows:
        raise SchemaError(f"{src.name} has no data rows")
    parsed = []
    for rowno, row in enumerate(rows, 2):
        try:
            ts = float(row[cols["timestamp"]]) * ts_scale
            angle = float(row[cols["angle"]]) * factor
            sens = {name: float(row[c]) for name, c in sensor_cols.items()}
        except ValueError:
            raise SchemaError(f"{src.name} row {rowno}: non-numeric value", row=rowno)
        parsed.append((ts, row[cols["image"]], angle, sens))
    parsed.sort(key=lambda p: p[0])

    period = meta.window * meta.frame_interval_us
    out = Path(out_dir)
    try:
        if out.exists():
            shutil.rmtree(out)
        (out / "images").mkdir(parents=True)
        frames = []
        with open(out / "index.csv", "w", newline="", encoding="utf-8") as fi, \
                open(out / "sensors.csv", "w", newline="", encoding="utf-8") as fs:
            wi, ws = csv.writer(fi, lineterminator="\n"), csv.writer(fs, lineterminator="\n")
            wi.writerow(["record_id", "image_path", "timestamp_us", "genuine_angle"])
            ws.writerow(["record_id", *sensor_cols])
            for rid, (_, image, angle, sens) in enumerate(parsed):
                src_img = image_root / image
                if not src_img.is_file():
                    raise MissingImage(f"row for {image}: file not found", record_id=rid)
                rel = f"images/{rid:06d}.png"
                ImageBuffer.open(src_img).save(out / rel)
                # Records are re-timed onto a uniform grid one frame window apart.
                ts = (rid + 1) * period
                wi.writerow([rid, rel, ts, repr(angle)])
                ws.writerow([rid, *(repr(sens[k]) for k in sensor_cols)])
                frames.extend(encode_frame(angle, meta.signal, can_id=meta.steering_id, timestamp_us=t)
                              for t in frame_times(ts, meta.window, meta.frame_interval_us))
        write_log(out / "frames.log", frames)
        write_meta(out, meta)
    except OSError as exc:
        raise IoFailure(f"cannot write dataset to {out}: {exc}") from exc
    return out
