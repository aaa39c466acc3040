import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from raids.codec import (
    CanFrame, SignalSpec, STEERING_SIGNAL, encode_frame, iter_log, load_signal_db, pack_signal,
    parse_log_line, read_log, serialize_log_line, unpack_raw, unpack_signal, write_log,
)
from raids.errors import BadDlc, MalformedLine, OutOfRange, TruncatedFrame

# the steering spec used by the worked examples
EX = SignalSpec(start_bit=0, bit_length=16, byte_order="little", scale=0.001, offset=-2.048)


def test_pack_examples():
    assert pack_signal(-2.048, EX)[0] == 0
    assert pack_signal(0.0, EX)[0] == 2048
    assert pack_signal(0.5, EX)[0] == 2548


def test_unpack_examples():
    assert unpack_signal(CanFrame(0x0C4, (0).to_bytes(2, "little")), EX) == pytest.approx(-2.048, abs=1e-12)
    assert abs(unpack_signal(CanFrame(0x0C4, (2548).to_bytes(2, "little")), EX) - 0.5) <= 0.0005


def test_pack_places_bits_little_endian():
    raw, data = pack_signal(0.5, EX)
    assert data == bytes([2548 & 0xFF, 2548 >> 8])


def test_big_endian_bit_layout():
    spec = SignalSpec(start_bit=4, bit_length=8, byte_order="big", scale=1, offset=0)
    _, data = pack_signal(0xAB, spec, bytes(2))
    # MSB-first from byte 0: skip 4 bits, then 8 bits of signal, 4 trailing bits
    assert data == bytes([0x0A, 0xB0])
    assert unpack_raw(data, spec) == 0xAB


def test_pack_preserves_other_bits():
    spec = SignalSpec(start_bit=8, bit_length=8, scale=1, offset=0)
    _, data = pack_signal(7, spec, bytes([0xFF, 0x00, 0xEE]))
    assert data == bytes([0xFF, 0x07, 0xEE])


def test_round_half_away_from_zero():
    spec = SignalSpec(bit_length=8, scale=1.0, offset=-100.0)
    assert pack_signal(-99.5, spec)[0] == 1   # (−99.5+100)=0.5 → 1
    assert pack_signal(-97.5, spec)[0] == 3   # 2.5 → 3, not banker's 2


def test_out_of_range_and_truncation():
    with pytest.raises(OutOfRange):
        pack_signal(-2.049, EX)
    with pytest.raises(OutOfRange):
        pack_signal(EX.physical_range()[1] + 0.01, EX)
    with pytest.raises(TruncatedFrame):
        unpack_signal(CanFrame(0x0C4, b"\x01"), EX)
    with pytest.raises(TruncatedFrame):
        pack_signal(0.0, EX, b"\x00")


def test_parse_example():
    f = parse_log_line("(0001.000000) can0 0C4#08F4")
    assert (f.id, f.dlc, list(f.data), f.timestamp_us) == (0x0C4, 2, [0x08, 0xF4], 1_000_000)
    assert serialize_log_line(f) == "(0000000001.000000) can0 0c4#08f4"
    assert parse_log_line(serialize_log_line(f)) == f


def test_empty_payload():
    f = CanFrame(0x123, b"", 5)
    line = serialize_log_line(f)
    assert line.endswith("123#")
    assert parse_log_line(line) == f


def test_bad_dlc():
    with pytest.raises(BadDlc):
        parse_log_line("(0001.000000) can0 0C4#" + "00" * 9)


@pytest.mark.parametrize("line,col", [
    ("0001.000000) can0 0C4#00", 0),
    ("(0001.00000) can0 0C4#00", 6),
    ("(0001.000000) can0 0C#00", 19),
    ("(0001.000000) can0 0C4#0G", 24),
    ("(0001.000000)can0 0C4#00", 13),
])
def test_malformed_reports_column(line, col):
    with pytest.raises(MalformedLine) as info:
        parse_log_line(line)
    assert info.value.column == col


def test_frame_invariants():
    with pytest.raises(OutOfRange):
        CanFrame(0x800, b"")
    with pytest.raises(BadDlc):
        CanFrame(1, bytes(9))
    with pytest.raises(OutOfRange):
        CanFrame(1, b"", -1)


def random_frames(rng, n):
    ts = np.cumsum(rng.integers(0, 50_000, n))
    return [CanFrame(int(rng.integers(0, 0x800)), rng.bytes(int(rng.integers(0, 9))), int(t),
                     "can0" if rng.random() < 0.5 else "vcan1") for t in ts]


def test_roundtrip_10k_frames(rng, tmp_path):
    frames = random_frames(rng, 10_000)
    lines = [serialize_log_line(f) for f in frames]
    assert [parse_log_line(s) for s in lines] == frames
    path = tmp_path / "bus.log"
    write_log(path, frames)
    back = read_log(path)
    assert back == frames
    assert all(a.timestamp_us <= b.timestamp_us for a, b in zip(back, back[1:]))


def test_iter_log_skips_blank_and_tags_line():
    frames = list(iter_log(["(0000000001.000000) can0 0c4#00", "", "(0000000002.000000) can0 0c4#01"]))
    assert len(frames) == 2
    with pytest.raises(MalformedLine) as info:
        list(iter_log(["(0000000001.000000) can0 0c4#00", "garbage"]))
    assert info.value.context["line_number"] == 2


def test_quantization_bound_10k(rng):
    lo, hi = EX.physical_range()
    values = rng.uniform(lo, hi - EX.scale, 10_000)
    errs = [abs(unpack_signal(CanFrame(1, pack_signal(v, EX)[1]), EX) - v) for v in values]
    assert max(errs) <= EX.scale / 2 + 1e-12


@settings(max_examples=300, deadline=None)
@given(st.floats(min_value=-2.048, max_value=2.0, allow_nan=False))
def test_quantization_property(v):
    back = unpack_signal(encode_frame(v, EX), EX)
    assert abs(back - v) <= EX.scale / 2 + 1e-12


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 0x7FF), st.binary(max_size=8), st.integers(0, 9_999_999_999_999_999))
def test_serialize_parse_identity(ident, data, ts):
    f = CanFrame(ident, data, ts)
    assert parse_log_line(serialize_log_line(f)) == f


def test_default_steering_spec_covers_policy_range():
    lo, hi = STEERING_SIGNAL.physical_range()
    assert lo <= -3.0 and hi >= 3.0
    assert math.isclose(STEERING_SIGNAL.scale, 0.001)


def test_signal_db(tmp_path):
    path = tmp_path / "db.json"
    path.write_text(json.dumps({"steer": {"start_bit": 0, "bit_length": 12, "scale": 0.01, "offset": -20}}))
    db = load_signal_db(path)
    assert db["steer"].bit_length == 12 and db["steer"].offset == -20
