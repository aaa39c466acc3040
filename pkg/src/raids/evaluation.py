"""Detection runs, metrics, alert actions and report files."""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from .codec import SignalSpec
from .config import SensorRange
from .context import ImageBuffer, build_context_vector, extract_features, preprocess_image
from .dataset import Record
from .errors import IoFailure, LengthMismatch, RaidsError
from .nn import ModelCheckpoint
from .validator import INTRUSION, ClassifierParams, classify

log = logging.getLogger(__name__)

ALERT_ACTIONS = ("disable_external_network", "emergency_stop", "handover_to_human")


@dataclass(frozen=True)
class Verdict:
    record_id: int
    score: float
    label: str
    latency_ms: float = 0.0
    actions: tuple[str, ...] = ()

    @property
    def is_intrusion(self) -> bool:
        return self.label == INTRUSION


@dataclass
class Metrics:
    accuracy: float
    unreported_intrusion_rate: float
    false_alarm_rate: float
    avg_latency_ms: float = 0.0
    max_latency_ms: float = 0.0
    n: int = 0
    true_normal: int = 0
    false_alarm: int = 0
    detected_intrusion: int = 0
    unreported_intrusion: int = 0


def alert_actions(label: str) -> tuple[str, ...]:
    return ALERT_ACTIONS if label == INTRUSION else ()


def emit_alert(record_id: int, actions: tuple[str, ...]) -> None:
    # Logged, not executed: there is no vehicle to act on.
    if actions:
        log.warning("intrusion at record %d: %s", record_id, " -> ".join(actions))


def detect_record(record: Record, image: ImageBuffer, cnn: ModelCheckpoint, classifier: ClassifierParams,
                  ranges: Sequence[SensorRange], signal: SignalSpec) -> Verdict:
    """Run both stages on one record and time exactly that path."""
    start = time.perf_counter()
    tensor = preprocess_image(image, cnn.extra["channel_mean"])
    feats = extract_features(tensor, cnn)
    r = build_context_vector(feats, record.sensors, ranges)
    score, label = classify(r, record.window(signal), classifier)
    latency = (time.perf_counter() - start) * 1000.0
    return Verdict(record.id, score, label, latency, alert_actions(label))


def run_detection(records: Sequence[Record], cnn: ModelCheckpoint, classifier: ClassifierParams,
                  ranges: Sequence[SensorRange] = (), signal: SignalSpec = SignalSpec(),
                  workers: int = 1) -> list[Verdict]:
    """Verdicts for every record, ordered by record id.

    Image decoding happens before the timer starts; the measured latency
    covers preprocessing, feature extraction, context assembly and
    classification.
    """

    def one(rec: Record) -> Verdict:
        try:
            image = ImageBuffer.open(rec.image_path)
            return detect_record(rec, image, cnn, classifier, ranges, signal)
        except RaidsError as exc:
            exc.context["record_id"] = rec.id
            raise type(exc)(f"record {rec.id}: {exc}", **exc.context) from exc

    ordered = sorted(records, key=lambda r: r.id)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            verdicts = list(pool.map(one, ordered))
    else:
        verdicts = [one(r) for r in ordered]
    for v in verdicts:
        emit_alert(v.record_id, v.actions)
    return verdicts


def compute_metrics(verdicts: Sequence[bool | int | str | Verdict], truth: Sequence[int],
                    latencies_ms: Sequence[float] | None = None) -> Metrics:
    """Accuracy plus per-class error rates.

    Verdicts may be Verdict objects, label strings, or booleans/ints where
    truthy means intrusion; ``truth`` uses 1 for intrusion.
    """
    if len(verdicts) != len(truth):
        raise LengthMismatch(f"{len(verdicts)} verdicts vs {len(truth)} labels")
    pred = []
    lat = list(latencies_ms) if latencies_ms is not None else []
    for v in verdicts:
        if isinstance(v, Verdict):
            pred.append(v.is_intrusion)
            if latencies_ms is None:
                lat.append(v.latency_ms)
        elif isinstance(v, str):
            pred.append(v == INTRUSION)
        else:
            pred.append(bool(v))
    tn = fp = tp = fn = 0
    for p, t in zip(pred, truth):
        if t:
            tp, fn = tp + p, fn + (not p)
        else:
            fp, tn = fp + p, tn + (not p)
    n = len(pred)
    return Metrics(
        accuracy=(tp + tn) / n if n else 0.0,
        unreported_intrusion_rate=fn / (tp + fn) if tp + fn else 0.0,
        false_alarm_rate=fp / (tn + fp) if tn + fp else 0.0,
        avg_latency_ms=float(np.mean(lat)) if lat else 0.0,
        max_latency_ms=float(np.max(lat)) if lat else 0.0,
        n=n, true_normal=tn, false_alarm=fp, detected_intrusion=tp, unreported_intrusion=fn,
    )


_TIMING = ("avg_latency_ms", "max_latency_ms")


def report_dict(metrics: Metrics, metadata: dict, generated_at: str | None = None) -> dict:
    m = asdict(metrics)
    timing = {k: m.pop(k) for k in _TIMING}
    timing["generated_at"] = generated_at or datetime.now(timezone.utc).isoformat(timespec="seconds")
    counts = {k: m.pop(k) for k in ("n", "true_normal", "false_alarm", "detected_intrusion", "unreported_intrusion")}
    return {"metrics": m, "counts": counts, "run": metadata, "timing": timing}


def metrics_from_report(report: dict) -> Metrics:
    timing = {k: report["timing"][k] for k in _TIMING}
    return Metrics(**report["metrics"], **timing, **report["counts"])


def format_table(metrics: Metrics, title: str = "") -> str:
    rows = [
        ("accuracy", f"{metrics.accuracy:.4f}"),
        ("unreported intrusion rate", f"{metrics.unreported_intrusion_rate:.4f}"),
        ("false alarm rate", f"{metrics.false_alarm_rate:.4f}"),
        ("records", str(metrics.n)),
        ("detected normals", str(metrics.true_normal)),
        ("false alarms", str(metrics.false_alarm)),
        ("detected intrusions", str(metrics.detected_intrusion)),
        ("unreported intrusions", str(metrics.unreported_intrusion)),
    ]
    width = max(len(k) for k, _ in rows)
    lines = [title] if title else []
    lines += [f"{k.ljust(width)}  {v}" for k, v in rows]
    return "\n".join(lines) + "\n"


def emit_report(metrics: Metrics, metadata: dict, out_dir: str | Path, name: str = "report",
                verdicts: Sequence[Verdict] = (), truth: Sequence[int] = (),
                generated_at: str | None = None) -> dict[str, Path]:
    """Write ``<name>.json``, ``<name>.txt``, ``<name>_records.csv`` and
    ``<name>_latency.csv``.

    Wall-clock values (latencies, generation time) live only in the JSON
    ``timing`` section and the latency CSV, so the remaining files are
    reproducible byte for byte.
    """
    out = Path(out_dir)
    paths = {k: out / f"{name}{suffix}" for k, suffix in
             (("json", ".json"), ("table", ".txt"), ("records", "_records.csv"), ("latency", "_latency.csv"))}
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths["json"].write_text(json.dumps(report_dict(metrics, metadata, generated_at), indent=2,
                                            sort_keys=True) + "\n", encoding="utf-8")
        paths["table"].write_text(format_table(metrics, metadata.get("title", "")), encoding="utf-8")
        with open(paths["records"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["record_id", "truth", "score", "verdict"])
            truth = list(truth) or [""] * len(verdicts)
            for v, t in zip(verdicts, truth):
                w.writerow([v.record_id, t, f"{v.score:.6f}", v.label])
        with open(paths["latency"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["record_id", "latency_ms"])
            for v in verdicts:
                w.writerow([v.record_id, f"{v.latency_ms:.4f}"])
    except OSError as exc:
        raise IoFailure(f"cannot write report to {out}: {exc}") from exc
    return paths


def read_verdicts(path: str | Path) -> list[Verdict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [Verdict(int(r["record_id"]), float(r["score"]), r["verdict"], 0.0, alert_actions(r["verdict"]))
                for r in csv.DictReader(fh)]
