import numpy as np

from raids.codec import SignalSpec, read_log
from raids.config import RunConfig
from raids.dataset import load_dataset
from raids.intrusion import IntrusionSpec, read_audit
from raids.pipeline import baseline_verdicts, forge_dataset, training_tuples
from raids.baseline import train_baseline
from raids.config import BaselineConfig

SIG = SignalSpec()


def test_forge_dataset_directed(small_dataset, tmp_path):
    out = forge_dataset(small_dataset, tmp_path / "f", IntrusionSpec("directed", seed=2))
    genuine = {r.id: r for r in load_dataset(small_dataset)}
    forged = load_dataset(out)
    audit = {m.index: m for m in read_audit(out / "manipulations.csv")}
    assert len(audit) == 2 * int(0.15 * 12)
    assert sum(r.label for r in forged) == len(audit)
    for r in forged:
        g = genuine[r.id]
        assert [f.timestamp_us for f in r.frames] == [f.timestamp_us for f in g.frames]
        shift = r.observed_angle(SIG) - g.observed_angle(SIG)
        if r.id in audit:
            m = audit[r.id]
            assert abs(shift - (m.forged - m.original)) < 2e-3
        else:
            assert r.frames == g.frames
    # same line count, frames keep the original frequency
    assert len(read_log(out / "frames.log")) == len(read_log(small_dataset / "frames.log"))


def test_forge_dataset_deterministic(small_dataset, tmp_path):
    spec = IntrusionSpec("abrupt", seed=9)
    a = forge_dataset(small_dataset, tmp_path / "a", spec)
    b = forge_dataset(small_dataset, tmp_path / "b", spec)
    for name in ("frames.log", "manipulations.csv", "index.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_training_tuples_balanced(small_dataset):
    recs = load_dataset(small_dataset)
    ctx = np.zeros((len(recs), 103))
    tuples = training_tuples(recs, ctx, IntrusionSpec("directed", seed=1), SIG)
    assert len(tuples) == 2 * len(recs)
    assert sum(t.label for t in tuples) == len(recs)
    for g, f in zip(tuples[::2], tuples[1::2]):
        assert g.label == 0 and f.label == 1
        assert not np.allclose(g.c, f.c)


def test_baseline_verdicts_filter_and_order(small_dataset):
    recs = load_dataset(small_dataset)
    seq = [r.observed_angle(SIG) for r in recs]
    params = train_baseline([seq], BaselineConfig(epochs=2))
    vs = baseline_verdicts(recs, params, SIG, keep={1, 5, 3})
    assert [v.record_id for v in vs] == [1, 3, 5]
