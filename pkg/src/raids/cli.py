"""Command-line entry point (``raids``)."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .baseline import PredictorParams, train_baseline
from .config import RunConfig, load_config
from .context import check_topology, extract_batched, train_cnn
from .dataset import DatasetMeta, load_dataset, split_70_30
from .errors import IoFailure, RaidsError, SchemaError
from .evaluation import compute_metrics, emit_report, format_table, read_verdicts, run_detection
from .nn import load_checkpoint, save_checkpoint
from .scenes import generate_dataset
from .validator import ClassifierParams, train_classifier

log = logging.getLogger("raids")


def _split_records(records, cfg: RunConfig, part: str):
    if part == "all":
        return sorted(records, key=lambda r: r.id)
    split = split_70_30([r.id for r in records], cfg.split_seed, cfg.split_mode)
    keep = set(split.train if part == "train" else split.test)
    return sorted((r for r in records if r.id in keep), key=lambda r: r.id)


def cmd_synth(args, cfg: RunConfig) -> int:
    sc = cfg.synth
    sc = dataclasses.replace(sc, n=args.n if args.n is not None else sc.n,
                             seed=args.seed if args.seed is not None else sc.seed,
                             night=args.night or sc.night)
    out = generate_dataset(sc.n, sc, args.out, cfg.signal)
    print(f"wrote {sc.n} records to {out}")
    return 0


def cmd_inject(args, cfg: RunConfig) -> int:
    spec = pipeline.intrusion_spec(cfg, args.kind, args.seed)
    out = pipeline.forge_dataset(args.dataset, args.out, spec)
    n = sum(1 for r in load_dataset(out) if r.label)
    print(f"forged {n} records ({args.kind}) into {out}")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    meta = DatasetMeta.read(args.dataset)
    records = _split_records(load_dataset(args.dataset, meta), cfg, args.split)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.stage == "cnn":
        x = pipeline.load_tensors(records)
        ckpt = train_cnn(x, np.array([r.genuine_angle for r in records]), cfg.cnn)
    elif args.stage == "classifier":
        if not args.cnn:
            raise SchemaError("--stage classifier needs --cnn")
        cnn = load_checkpoint(args.cnn)
        check_topology(cnn)
        x = pipeline.load_tensors(records) - np.asarray(cnn.extra["channel_mean"], dtype=np.float32)
        ctx = pipeline.context_vectors(records, extract_batched(x, cnn), cfg)
        tuples = pipeline.training_tuples(records, ctx, pipeline.intrusion_spec(cfg, args.kind), meta.signal)
        ckpt = train_classifier(tuples, cfg.classifier, log_path=args.log).checkpoint
    else:
        ordered = sorted(records, key=lambda r: (r.timestamp_us, r.id))
        ckpt = train_baseline([[r.observed_angle(meta.signal) for r in ordered]], cfg.baseline).checkpoint
    save_checkpoint(out, ckpt)
    print(f"saved {args.stage} checkpoint to {out} (final loss {ckpt.final_loss:.6f})")
    return 0


def _resolve_checkpoints(args) -> tuple[Path, Path]:
    cnn, clf = args.cnn, args.classifier
    if args.checkpoints:
        root = Path(args.checkpoints)
        cnn = cnn or root / "cnn.ckpt"
        if not clf:
            named = root / f"classifier_{args.kind}.ckpt" if args.kind else None
            clf = named if named and named.exists() else root / "classifier.ckpt"
    if not cnn or not clf:
        raise SchemaError("need --checkpoints DIR or both --cnn and --classifier")
    return Path(cnn), Path(clf)


def _truth(records) -> list[int]:
    return [r.label for r in sorted(records, key=lambda r: r.id)]


def cmd_detect(args, cfg: RunConfig) -> int:
    cnn_path, clf_path = _resolve_checkpoints(args)
    cnn = load_checkpoint(cnn_path)
    check_topology(cnn)
    clf = ClassifierParams.from_checkpoint(load_checkpoint(clf_path))
    meta = DatasetMeta.read(args.dataset)
    records = _split_records(load_dataset(args.dataset, meta), cfg, args.split)
    verdicts = run_detection(records, cnn, clf, cfg.sensors, meta.signal, workers=args.workers or cfg.workers)
    truth = _truth(records)
    metrics = compute_metrics(verdicts, truth)
    emit_report(metrics, {"title": "raids detection", "dataset": str(args.dataset), "split": args.split},
                args.out, args.name, verdicts, truth)
    sys.stdout.write(format_table(metrics, "raids detection"))
    return 0


def _read_truth(path: Path) -> dict[int, int]:
    if path.is_dir():
        return {r.id: r.label for r in load_dataset(path)}
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    col = "label" if rows and "label" in rows[0] else "truth"
    try:
        return {int(r["record_id"]): int(r[col]) for r in rows}
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"{path}: need record_id and label columns") from exc


def cmd_eval(args, cfg: RunConfig) -> int:
    verdicts = read_verdicts(args.verdicts)
    truth_map = _read_truth(Path(args.truth))
    missing = [v.record_id for v in verdicts if v.record_id not in truth_map]
    if missing:
        raise SchemaError(f"no ground truth for record(s) {missing[:5]}")
    truth = [truth_map[v.record_id] for v in verdicts]
    metrics = compute_metrics([v.label for v in verdicts], truth)
    if args.out:
        emit_report(metrics, {"title": "evaluation", "verdicts": str(args.verdicts)}, args.out, args.name,
                    verdicts, truth)
    sys.stdout.write(format_table(metrics, "evaluation"))
    return 0


def cmd_baseline(args, cfg: RunConfig) -> int:
    params = PredictorParams.from_checkpoint(load_checkpoint(args.checkpoint))
    meta = DatasetMeta.read(args.dataset)
    records = load_dataset(args.dataset, meta)
    keep = {r.id for r in _split_records(records, cfg, args.split)}
    verdicts = pipeline.baseline_verdicts(records, params, meta.signal, keep)
    truth = _truth([r for r in records if r.id in keep])
    metrics = compute_metrics(verdicts, truth)
    emit_report(metrics, {"title": "baseline detection", "dataset": str(args.dataset), "split": args.split},
                args.out, args.name, verdicts, truth)
    sys.stdout.write(format_table(metrics, "baseline detection"))
    return 0


def cmd_experiment(args, cfg: RunConfig) -> int:
    if args.n is not None:
        cfg.synth.n = args.n
    kinds = args.kinds.split(",")
    res = pipeline.run_experiment(cfg, args.out, kinds=kinds, night=not args.no_night)
    for key in sorted(res.metrics):
        m = res.metrics[key]
        print(f"{key:24s} accuracy {m.accuracy:.4f}  unreported {m.unreported_intrusion_rate:.4f}  "
              f"false alarm {m.false_alarm_rate:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="raids", description="Road-context-aware CAN intrusion detection")
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="render a synthetic drive")
    s.add_argument("--n", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--night", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("inject", help="forge steering frames in a dataset")
    s.add_argument("--kind", choices=("abrupt", "directed"), required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_inject)

    s = sub.add_parser("train", help="train one model")
    s.add_argument("--stage", choices=("cnn", "classifier", "baseline"), required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--split", choices=("train", "all"), default="train")
    s.add_argument("--cnn", help="CNN checkpoint (classifier stage)")
    s.add_argument("--kind", choices=("abrupt", "directed"), default="directed")
    s.add_argument("--log", help="per-epoch CSV log (classifier stage)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("detect", help="run both stages over a dataset")
    s.add_argument("--dataset", required=True)
    s.add_argument("--checkpoints", help="directory holding cnn.ckpt and classifier[_KIND].ckpt")
    s.add_argument("--cnn")
    s.add_argument("--classifier")
    s.add_argument("--kind", choices=("abrupt", "directed"))
    s.add_argument("--split", choices=("test", "all"), default="test")
    s.add_argument("--workers", type=int)
    s.add_argument("--out", default="reports")
    s.add_argument("--name", default="detect")
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("eval", help="score a verdict CSV against ground truth")
    s.add_argument("--verdicts", required=True)
    s.add_argument("--truth", required=True, help="dataset directory or CSV with record_id,label")
    s.add_argument("--out")
    s.add_argument("--name", default="eval")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("baseline", help="score a dataset with the history-only detector")
    s.add_argument("--dataset", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--split", choices=("test", "all"), default="test")
    s.add_argument("--out", default="reports")
    s.add_argument("--name", default="baseline")
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("experiment", help="full synth/train/evaluate cycle")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int)
    s.add_argument("--kinds", default="abrupt,directed")
    s.add_argument("--no-night", action="store_true")
    s.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        return args.func(args, cfg)
    except RaidsError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return exc.exit_status


if __name__ == "__main__":
    sys.exit(main())
