"""End-to-end experiment: synthesize, forge, train both detectors, evaluate."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .baseline import PredictorParams, score_sequence, train_baseline
from .codec import SignalSpec, write_log
from .config import RunConfig
from .context import ImageBuffer, build_context_vector, extract_batched, preprocess_image, train_cnn
from .dataset import AUDIT_FILE, DatasetMeta, Record, load_dataset, split_70_30
from .evaluation import Metrics, Verdict, compute_metrics, emit_report, run_detection
from .intrusion import IntrusionSpec, forge_frames, forge_record, inject, write_audit
from .nn import save_checkpoint
from .scenes import generate_dataset
from .validator import LabeledTuple, train_classifier

log = logging.getLogger(__name__)

TWIN_SEED_XOR = 0x7A1D_5EED


def intrusion_spec(cfg: RunConfig, kind: str, seed: int | None = None) -> IntrusionSpec:
    ic = cfg.intrusion
    return IntrusionSpec(kind=kind, select_fraction=ic.select_fraction, tail_fraction=ic.tail_fraction,
                         delta_range=ic.abrupt_delta if kind == "abrupt" else ic.directed_delta,
                         flip_threshold=ic.flip_threshold, seed=ic.seed if seed is None else seed)


def _link_or_copy(src: Path, dst: Path) -> None:
    try:
        os.link(src, dst)
    except OSError:
        shutil.copy2(src, dst)


def forge_dataset(src_dir: str | Path, out_dir: str | Path, spec: IntrusionSpec) -> Path:
    """Write a copy of a dataset with forged steering frames plus the audit.

    Injection runs over the genuine angles in record-id order; the audit's
    ``index`` column holds record ids.
    """
    src, out = Path(src_dir), Path(out_dir)
    meta = DatasetMeta.read(src)
    records = sorted(load_dataset(src, meta), key=lambda r: r.id)
    _, manipulations = inject([r.genuine_angle for r in records], spec)
    shift = {records[m.index].id: m.forged - m.original for m in manipulations}
    if out.exists():
        shutil.rmtree(out)
    (out / "images").mkdir(parents=True)
    for img in sorted((src / "images").iterdir()):
        _link_or_copy(img, out / "images" / img.name)
    for name in ("index.csv", "sensors.csv", "scenes.csv", "dataset.json"):
        if (src / name).exists():
            shutil.copyfile(src / name, out / name)
    frames = []
    for rec in records:
        frames.extend(forge_frames(rec.frames, shift[rec.id], meta.signal) if rec.id in shift else rec.frames)
    frames.sort(key=lambda f: f.timestamp_us)
    write_log(out / "frames.log", frames)
    write_audit(out / AUDIT_FILE, [dataclasses.replace(m, index=records[m.index].id) for m in manipulations])
    return out


def load_tensors(records: Sequence[Record]) -> np.ndarray:
    """Un-centered preprocessed images, (N, 100, 100, 3) float32."""
    return np.stack([preprocess_image(ImageBuffer.open(r.image_path)) for r in records])


def context_vectors(records: Sequence[Record], features: np.ndarray, cfg: RunConfig) -> np.ndarray:
    return np.stack([build_context_vector(f, r.sensors, cfg.sensors) for r, f in zip(records, features)])


def training_tuples(records: Sequence[Record], contexts: np.ndarray, spec: IntrusionSpec,
                    signal: SignalSpec) -> list[LabeledTuple]:
    """A genuine tuple and a forged twin per record (50/50 balance)."""
    twin = dataclasses.replace(spec, seed=spec.seed ^ TWIN_SEED_XOR)
    out = []
    for rec, r in zip(records, contexts):
        c = rec.window(signal)
        forged, _ = forge_record(rec.genuine_angle, twin, rec.id)
        out.append(LabeledTuple(r, c, 0))
        out.append(LabeledTuple(r, c + (forged - rec.genuine_angle), 1))
    return out


def baseline_verdicts(records: Sequence[Record], params: PredictorParams, signal: SignalSpec,
                      keep: set[int] | None = None) -> list[Verdict]:
    """Score each record's observed angle against the history before it."""
    ordered = sorted(records, key=lambda r: (r.timestamp_us, r.id))
    errors = score_sequence([r.observed_angle(signal) for r in ordered], params)
    out = [Verdict(r.id, float(e), "intrusion" if e > params.tau else "normal")
           for r, e in zip(ordered, errors) if keep is None or r.id in keep]
    return sorted(out, key=lambda v: v.record_id)


@dataclass
class ExperimentResult:
    metrics: dict[str, Metrics] = field(default_factory=dict)
    paths: dict[str, Path] = field(default_factory=dict)
    durations: dict[str, float] = field(default_factory=dict)

    def accuracy(self, key: str) -> float:
        return self.metrics[key].accuracy


def run_experiment(cfg: RunConfig, workdir: str | Path, kinds: Iterable[str] = ("abrupt", "directed"),
                   night: bool = True) -> ExperimentResult:
    """Full train/evaluate cycle on a fresh synthetic corpus.

    Metric keys look like ``raids/directed/day`` and ``baseline/abrupt/day``.
    The CNN and classifiers are trained on the training split rendered in
    both lightings (when ``night`` is set); test records are evaluated once
    per lighting with identical geometry and forgeries.
    """
    work = Path(workdir)
    work.mkdir(parents=True, exist_ok=True)
    res = ExperimentResult()
    clock = time.perf_counter()

    def lap(name):
        nonlocal clock
        now = time.perf_counter()
        res.durations[name] = now - clock
        clock = now
        log.info("%s done in %.1fs", name, res.durations[name])

    lightings = ["day", "night"] if night else ["day"]
    dirs = {}
    for light in lightings:
        sc = dataclasses.replace(cfg.synth, night=light == "night")
        dirs[light] = generate_dataset(sc.n, sc, work / "data" / light, cfg.signal)
    lap("synth")

    meta = DatasetMeta.read(dirs["day"])
    signal = meta.signal
    genuine = {light: sorted(load_dataset(d, meta), key=lambda r: r.id) for light, d in dirs.items()}
    ids = [r.id for r in genuine["day"]]
    split = split_70_30(ids, cfg.split_seed, cfg.split_mode)
    train_ids, test_ids = set(split.train), set(split.test)
    tensors = {light: load_tensors(recs) for light, recs in genuine.items()}
    lap("load")

    train_pos = np.array([i for i, rid in enumerate(ids) if rid in train_ids])
    x_train = np.concatenate([tensors[l][train_pos] for l in lightings])
    y_train = np.concatenate([[genuine[l][i].genuine_angle for i in train_pos] for l in lightings])
    cnn = train_cnn(x_train, y_train, cfg.cnn)
    del x_train
    ckpt_dir = work / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    save_checkpoint(ckpt_dir / "cnn.ckpt", cnn)
    res.paths["cnn"] = ckpt_dir / "cnn.ckpt"
    lap("train_cnn")

    mean = np.asarray(cnn.extra["channel_mean"], dtype=np.float32)
    contexts = {}
    for light in lightings:
        feats = extract_batched(tensors[light] - mean, cnn)
        contexts[light] = context_vectors(genuine[light], feats, cfg)
    del tensors
    lap("features")

    seq_records = sorted(genuine["day"], key=lambda r: (r.timestamp_us, r.id))
    baseline = train_baseline([[r.observed_angle(signal) for r in seq_records]], cfg.baseline,
                              [[r.id in train_ids for r in seq_records]])
    save_checkpoint(ckpt_dir / "baseline.ckpt", baseline.checkpoint)
    res.paths["baseline"] = ckpt_dir / "baseline.ckpt"
    lap("train_baseline")

    reports = work / "reports"
    reports.mkdir(exist_ok=True)
    for kind in kinds:
        spec = intrusion_spec(cfg, kind)
        tuples = []
        for light in lightings:
            recs = [genuine[light][i] for i in train_pos]
            tuples += training_tuples(recs, contexts[light][train_pos], spec, signal)
        clf = train_classifier(tuples, cfg.classifier, log_path=reports / f"classifier_{kind}_train.csv")
        save_checkpoint(ckpt_dir / f"classifier_{kind}.ckpt", clf.checkpoint)
        res.paths[f"classifier_{kind}"] = ckpt_dir / f"classifier_{kind}.ckpt"
        lap(f"train_classifier_{kind}")

        for light in lightings:
            forged_dir = forge_dataset(dirs[light], work / "data" / f"{light}_{kind}", spec)
            res.paths[f"forged/{kind}/{light}"] = forged_dir
            forged = [r for r in load_dataset(forged_dir, meta) if r.id in test_ids]
            verdicts = run_detection(forged, cnn, clf, cfg.sensors, signal, workers=cfg.workers)
            truth = [r.label for r in sorted(forged, key=lambda r: r.id)]
            key = f"raids/{kind}/{light}"
            res.metrics[key] = compute_metrics(verdicts, truth)
            emit_report(res.metrics[key], _metadata(cfg, key), reports, key.replace("/", "_"), verdicts, truth)
            if light == "day":
                all_forged = load_dataset(forged_dir, meta)
                bverdicts = baseline_verdicts(all_forged, baseline, signal, keep=test_ids)
                bkey = f"baseline/{kind}/day"
                res.metrics[bkey] = compute_metrics(bverdicts, truth)
                emit_report(res.metrics[bkey], _metadata(cfg, bkey), reports, bkey.replace("/", "_"),
                            bverdicts, truth)
            lap(f"detect_{kind}_{light}")
    # wall-clock latencies stay in the per-report timing sections
    summary = {k: {f: v for f, v in dataclasses.asdict(m).items() if not f.endswith("latency_ms")}
               for k, m in res.metrics.items()}
    (reports / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return res


def _metadata(cfg: RunConfig, key: str) -> dict:
    return {"title": key, "system": key.split("/")[0], "intrusion": key.split("/")[1],
            "lighting": key.split("/")[2], "n_records": cfg.synth.n, "synth_seed": cfg.synth.seed,
            "split_seed": cfg.split_seed}
