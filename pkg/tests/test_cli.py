import json
import subprocess
import sys

import pytest

from raids.cli import main
from raids.config import RunConfig, from_dict, load_config
from raids.errors import ConfigError


@pytest.fixture(scope="module")
def fast_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "run.json"
    path.write_text(json.dumps({
        "synth": {"n": 30, "seed": 5},
        "cnn": {"epochs": 1, "batch_size": 16, "momentum": 0.9},
        "classifier": {"epochs": 5, "lr": 0.01},
        "baseline": {"epochs": 3},
    }))
    return str(path)


def test_config_roundtrip_and_unknown_keys(tmp_path):
    cfg = RunConfig()
    assert from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        from_dict({"cnn": {"epochz": 3}})
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)
    assert from_dict({"intrusion": {"abrupt_delta": [0.2, 0.9]}}).intrusion.abrupt_delta == (0.2, 0.9)


def test_full_cli_flow(tmp_path, fast_config, capsys):
    ds, forged, ck, rep = tmp_path / "ds", tmp_path / "forged", tmp_path / "ck", tmp_path / "rep"
    base = ["--config", fast_config]
    assert main(base + ["synth", "--out", str(ds)]) == 0
    assert main(base + ["inject", "--kind", "directed", "--dataset", str(ds), "--out", str(forged)]) == 0
    assert (forged / "manipulations.csv").exists()
    assert main(base + ["train", "--stage", "cnn", "--dataset", str(ds), "--out", str(ck / "cnn.ckpt")]) == 0
    assert main(base + ["train", "--stage", "classifier", "--dataset", str(ds), "--cnn", str(ck / "cnn.ckpt"),
                        "--kind", "directed", "--out", str(ck / "classifier_directed.ckpt"),
                        "--log", str(tmp_path / "clf.csv")]) == 0
    assert main(base + ["train", "--stage", "baseline", "--dataset", str(ds), "--out", str(ck / "baseline.ckpt")]) == 0
    assert main(base + ["detect", "--dataset", str(forged), "--checkpoints", str(ck), "--kind", "directed",
                        "--out", str(rep)]) == 0
    out = capsys.readouterr().out
    assert "accuracy" in out
    report = json.loads((rep / "detect.json").read_text())
    assert report["counts"]["n"] == 9  # 30% of 30 test records
    assert main(base + ["eval", "--verdicts", str(rep / "detect_records.csv"), "--truth", str(forged),
                        "--out", str(rep), "--name", "again"]) == 0
    again = json.loads((rep / "again.json").read_text())
    assert again["metrics"] == report["metrics"]
    assert main(base + ["baseline", "--dataset", str(forged), "--checkpoint", str(ck / "baseline.ckpt"),
                        "--out", str(rep)]) == 0
    assert json.loads((rep / "baseline.json").read_text())["counts"]["n"] == 9


def test_error_exit_codes(tmp_path, capsys):
    assert main(["detect", "--dataset", str(tmp_path), "--cnn", str(tmp_path / "nope.ckpt"),
                 "--classifier", str(tmp_path / "nope.ckpt")]) != 0
    (tmp_path / "ds").mkdir()
    code = main(["baseline", "--dataset", str(tmp_path / "ds"), "--checkpoint", str(tmp_path / "x")])
    assert code != 0
    bad = tmp_path / "bad.json"
    bad.write_text('{"oops": 1}')
    assert main(["--config", str(bad), "synth", "--out", str(tmp_path / "s")]) == 2
    assert "CONFIG_ERROR" in capsys.readouterr().err


def test_schema_error_exit_status(small_dataset, tmp_path):
    # a verdict file without ground truth for its ids
    v = tmp_path / "v.csv"
    v.write_text("record_id,truth,score,verdict\n999,,0.1,normal\n")
    assert main(["eval", "--verdicts", str(v), "--truth", str(small_dataset)]) == 44


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "raids.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("synth", "inject", "train", "detect", "eval", "baseline", "experiment"):
        assert cmd in res.stdout
