"""Acceptance gate: one PASS/FAIL line per criterion (see the terminal summary).

The end-to-end run trains on a 2000-record synthetic drive and takes several
minutes on one CPU core.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from raids.baseline import RecurrentCell
from raids.codec import CanFrame, SignalSpec, pack_signal, parse_log_line, serialize_log_line, unpack_signal
from raids.config import CnnConfig, load_config
from raids.context import build_cnn
from raids.intrusion import IntrusionSpec, inject_abrupt, inject_directed
from raids.nn import Conv2D, Dense, Dropout, Flatten, ReLU, Sequential, Sigmoid, bce_loss
from raids.pipeline import run_experiment

from acceptance_log import record
from gradcheck import check
from oracles import tail_indices

pytestmark = pytest.mark.acceptance

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_shape_conformance():
    start = time.perf_counter()
    net = build_cnn(0, CnnConfig(), with_head=False)
    x = np.random.default_rng(0).uniform(-0.5, 0.5, (1, 100, 100, 3)).astype(np.float32)
    conv1 = net.forward(x, upto=1)
    conv2 = net.forward(x, upto=3)
    feats = net.forward(x)
    elapsed = time.perf_counter() - start
    ok = (conv1.shape[1:] == (50, 50, 24) and conv2.shape[1:] == (25, 25, 64) and feats.shape[1:] == (100,)
          and elapsed < 1.0)
    record("shape conformance", ok, f"{conv1.shape[1:]} {conv2.shape[1:]} {feats.shape[1:]} in {elapsed:.2f}s")
    assert ok


def _f64(layer, rng):
    # random biases keep pre-activations off the ReLU kink at exactly zero
    w, b = layer.params
    layer.params = [w.astype(np.float64), rng.normal(0, 0.5, b.shape)]
    return layer


def _trial(i):
    """Randomized small network touching every layer kind."""
    rng = np.random.default_rng([77, i])
    if i % 4 == 3:
        h, t = int(rng.integers(2, 5)), int(rng.integers(2, 6))
        net = Sequential([RecurrentCell.init(rng, h, np.float64)])
        return net, rng.normal(size=(3, t, 1)), rng.normal(size=(3, 1)), "mse"
    s = int(rng.integers(1, 3))
    side, cin, cout = int(rng.integers(3, 6)), int(rng.integers(1, 3)), int(rng.integers(1, 4))
    flat = math.ceil(side / s) ** 2 * cout
    net = Sequential([_f64(Conv2D.init(rng, 3, cin, cout, s), rng), ReLU(), Dropout(float(rng.uniform(0.5, 1.0))),
                      Flatten(), _f64(Dense.init(rng, flat, 3), rng), ReLU(), _f64(Dense.init(rng, 3, 1), rng), Sigmoid()])
    x = rng.normal(size=(2, side, side, cin))
    return net, x, rng.integers(0, 2, (2, 1)).astype(float), "bce"


def test_gradient_oracle():
    start = time.perf_counter()
    worst = 0.0
    for i in range(100):
        net, x, y, loss = _trial(i)
        worst = max(worst, check(net, x, y, loss, seed=i))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-3 and elapsed < 30
    record("gradient oracle", ok, f"100 trials, max rel err {worst:.2e}, {elapsed:.1f}s")
    assert ok


def test_bce_closed_form():
    half = bce_loss(0.5, 1.0)[0]
    one = bce_loss(1.0, 1.0)[0]
    ok = abs(half - math.log(2)) < 1e-9 and one == 0.0
    record("BCE closed form", ok, f"bce(0.5,1)={half:.12f} bce(1,1)={one}")
    assert ok


def test_codec_properties():
    rng = np.random.default_rng(2024)
    ts = np.cumsum(rng.integers(0, 40_000, 10_000))
    frames = [CanFrame(int(rng.integers(0, 0x800)), rng.bytes(int(rng.integers(0, 9))), int(t)) for t in ts]
    roundtrip = all(parse_log_line(serialize_log_line(f)) == f for f in frames)
    spec = SignalSpec(offset=-2.048)
    lo, hi = spec.physical_range()
    vals = rng.uniform(lo, hi - spec.scale, 10_000)
    err = max(abs(unpack_signal(CanFrame(1, pack_signal(v, spec)[1]), spec) - v) for v in vals)
    ok = roundtrip and err <= spec.scale / 2 + 1e-12
    record("codec properties", ok, f"10k roundtrip={roundtrip}, max quantization err {err:.2e}")
    assert ok


def test_injector_statistics():
    a = np.random.default_rng(9).normal(0, 0.8, 1000).tolist()
    _, ab = inject_abrupt(a, IntrusionSpec("abrupt", seed=5))
    out, di = inject_directed(a, IntrusionSpec("directed", seed=5))
    ab_ok = len(ab) == 300 and all(0.1 <= abs(m.forged - m.original) <= 0.9 for m in ab)
    tails = tail_indices(a, 0.15)
    di_ok = len(di) == 300 and {m.index for m in di} == tails
    rule_ok = all((m.rule == "flip") == (abs(m.original) > 0.3) for m in di)
    delta_ok = all(m.forged == -m.original if m.rule == "flip" else 0.5 <= abs(m.forged - m.original) <= 1.0
                   for m in di)
    ok = ab_ok and di_ok and rule_ok and delta_ok
    record("injector statistics", ok, f"abrupt {len(ab)}, directed {len(di)} (tails match={di_ok}), "
                                      f"flip rule={rule_ok}, deltas in range={ab_ok and delta_ok}")
    assert ok


@pytest.fixture(scope="module")
def experiment(tmp_path_factory):
    cfg = load_config(CONFIGS / "experiment.json")
    start = time.perf_counter()
    res = run_experiment(cfg, tmp_path_factory.mktemp("experiment"))
    return cfg, res, time.perf_counter() - start


@pytest.mark.slow
def test_end_to_end_detection(experiment):
    cfg, res, elapsed = experiment
    acc = {k: m.accuracy for k, m in res.metrics.items()}
    d, a = acc["raids/directed/day"], acc["raids/abrupt/day"]
    bd, ba = acc["baseline/directed/day"], acc["baseline/abrupt/day"]
    checks = {
        "directed>=0.95": d >= 0.95,
        "abrupt>=0.85": a >= 0.85,
        "directed>=abrupt": d >= a,
        "gap directed>=10pt": d - bd >= 0.10,
        "gap abrupt>=10pt": a - ba >= 0.10,
        "runtime<30min": elapsed < 1800,
    }
    ok = cfg.synth.n >= 2000 and all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    record("end-to-end detection", ok,
           f"n={cfg.synth.n} directed {d:.4f} abrupt {a:.4f} | baseline directed {bd:.4f} abrupt {ba:.4f} "
           f"| {elapsed / 60:.1f} min" + (f" | failed: {failed}" if failed else ""))
    assert ok


@pytest.mark.slow
def test_day_night(experiment):
    _, res, _ = experiment
    lines = []
    ok = True
    for kind in ("directed", "abrupt"):
        day = res.metrics[f"raids/{kind}/day"].accuracy
        night = res.metrics[f"raids/{kind}/night"].accuracy
        ok &= night <= day and day - night <= 0.10
        lines.append(f"{kind} day {day:.4f} night {night:.4f}")
    record("day/night", ok, "; ".join(lines))
    assert ok


@pytest.mark.slow
def test_latency(experiment):
    _, res, _ = experiment
    m = res.metrics["raids/directed/day"]
    ok = m.n >= 500 and m.avg_latency_ms <= 50 and m.max_latency_ms <= 150
    record("latency", ok, f"{m.n} records, mean {m.avg_latency_ms:.2f} ms, max {m.max_latency_ms:.2f} ms")
    assert ok


def _stable_files(root: Path) -> dict[str, bytes]:
    """Every artifact except wall-clock timing: checkpoints, forged logs, audits, reports."""
    out = {}
    for p in sorted(root.rglob("*")):
        rel = str(p.relative_to(root))
        if not p.is_file() or rel.endswith(".png") or rel.endswith("_latency.csv"):
            continue
        data = p.read_bytes()
        if p.suffix == ".json" and rel.startswith("reports"):
            doc = json.loads(data)
            doc.pop("timing", None)
            data = json.dumps(doc, sort_keys=True).encode()
        out[rel] = data
    return out


@pytest.mark.slow
def test_determinism(tmp_path):
    cfg = load_config(CONFIGS / "smoke.json")
    run_experiment(cfg, tmp_path / "a")
    run_experiment(load_config(CONFIGS / "smoke.json"), tmp_path / "b")
    a, b = _stable_files(tmp_path / "a"), _stable_files(tmp_path / "b")
    diff = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    kinds = {k.split("/")[0] for k in a}
    covered = (any(k.endswith(".ckpt") for k in a) and any(k.endswith("frames.log") and "_" in k for k in a)
               and any(k.endswith("_records.csv") for k in a))
    ok = not diff and covered
    record("determinism", ok, f"{len(a)} files compared over {sorted(kinds)}"
                              + (f", differing: {diff[:5]}" if diff else ", byte-identical"))
    assert ok
