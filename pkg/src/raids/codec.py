"""CAN frame codec: signal packing and candump-style text logs.

Log lines look like ``(0000000001.000000) can0 0c4#08f4``: seconds and
microseconds since capture start, bus name, 3-hex-digit standard identifier,
and the payload as hex. Serialization always emits the canonical form
(10-digit seconds, lowercase hex).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import BadDlc, ConfigError, MalformedLine, OutOfRange, TruncatedFrame

MAX_ID = 0x7FF
MAX_DLC = 8


@dataclass(frozen=True)
class CanFrame:
    """One classical CAN data frame with an 11-bit identifier."""

    id: int
    data: bytes = b""
    timestamp_us: int = 0
    bus: str = field(default="can0", compare=True)

    def __post_init__(self) -> None:
        if not 0 <= self.id <= MAX_ID:
            raise OutOfRange(f"identifier {self.id:#x} is not an 11-bit value")
        if len(self.data) > MAX_DLC:
            raise BadDlc(f"payload of {len(self.data)} bytes exceeds {MAX_DLC}")
        if self.timestamp_us < 0:
            raise OutOfRange("timestamp must be non-negative")
        object.__setattr__(self, "data", bytes(self.data))

    @property
    def dlc(self) -> int:
        return len(self.data)


@dataclass(frozen=True)
class SignalSpec:
    """Placement and scaling of one physical signal inside a payload.

    ``start_bit`` counts from the least significant bit of byte 0 for
    ``little`` byte order, and from the most significant bit of byte 0 for
    ``big``. In both cases the signal occupies ``bit_length`` consecutive
    bits in that numbering.
    """

    start_bit: int = 0
    bit_length: int = 16
    byte_order: str = "little"
    scale: float = 0.001
    offset: float = -4.096
    unit: str = "rad"

    def __post_init__(self) -> None:
        if self.byte_order not in ("little", "big"):
            raise ConfigError(f"byte_order must be 'little' or 'big', got {self.byte_order!r}")
        if not 0 <= self.start_bit <= 63 or not 1 <= self.bit_length <= 64:
            raise ConfigError("start_bit must be in 0..63 and bit_length in 1..64")
        if self.start_bit + self.bit_length > 64:
            raise ConfigError("signal does not fit in 64 payload bits")
        if self.scale == 0:
            raise ConfigError("scale must be non-zero")

    @property
    def min_bytes(self) -> int:
        return math.ceil((self.start_bit + self.bit_length) / 8)

    @property
    def raw_max(self) -> int:
        return (1 << self.bit_length) - 1

    def physical_range(self) -> tuple[float, float]:
        ends = (self.offset, self.raw_max * self.scale + self.offset)
        return min(ends), max(ends)


# Steering angle carried by the steering ECU: 16-bit little-endian, 1 mrad
# per bit, offset -4.096 rad. Wide enough for every genuine range of the
# reference datasets plus unclipped forged values.
STEERING_SIGNAL = SignalSpec()
STEERING_ID = 0x0C4


def _round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def pack_signal(value: float, spec: SignalSpec, payload: bytes | None = None) -> tuple[int, bytes]:
    """Quantize ``value`` and place it into ``payload``.

    Returns the raw integer and the resulting payload. When ``payload`` is
    omitted a zero payload of the minimum length is used.
    """
    raw = _round_half_away((value - spec.offset) / spec.scale)
    if raw < 0 or raw > spec.raw_max:
        raise OutOfRange(f"value {value} maps to raw {raw}, outside {spec.bit_length} bits")
    if payload is None:
        payload = bytes(spec.min_bytes)
    if len(payload) < spec.min_bytes:
        raise TruncatedFrame(f"payload has {len(payload)} bytes, signal needs {spec.min_bytes}")
    n = len(payload)
    mask = spec.raw_max
    if spec.byte_order == "little":
        word = int.from_bytes(payload, "little")
        word = (word & ~(mask << spec.start_bit)) | (raw << spec.start_bit)
        return raw, word.to_bytes(n, "little")
    shift = 8 * n - spec.start_bit - spec.bit_length
    word = int.from_bytes(payload, "big")
    word = (word & ~(mask << shift)) | (raw << shift)
    return raw, word.to_bytes(n, "big")


def unpack_raw(data: bytes, spec: SignalSpec) -> int:
    if len(data) < spec.min_bytes:
        raise TruncatedFrame(f"frame carries {len(data)} bytes, signal needs {spec.min_bytes}")
    if spec.byte_order == "little":
        return (int.from_bytes(data, "little") >> spec.start_bit) & spec.raw_max
    shift = 8 * len(data) - spec.start_bit - spec.bit_length
    return (int.from_bytes(data, "big") >> shift) & spec.raw_max


def unpack_signal(frame: CanFrame, spec: SignalSpec) -> float:
    return unpack_raw(frame.data, spec) * spec.scale + spec.offset


def encode_frame(value: float, spec: SignalSpec = STEERING_SIGNAL, *, can_id: int = STEERING_ID,
                 timestamp_us: int = 0, dlc: int | None = None) -> CanFrame:
    """Build a frame carrying a single signal."""
    payload = bytes(dlc if dlc is not None else spec.min_bytes)
    _, data = pack_signal(value, spec, payload)
    return CanFrame(can_id, data, timestamp_us)


# -- text log -----------------------------------------------------------------

_HEX = set("0123456789abcdefABCDEF")


def parse_log_line(line: str) -> CanFrame:
    """Parse one candump-style line into a :class:`CanFrame`."""
    s = line.rstrip("\r\n")
    if not s.startswith("("):
        raise MalformedLine("expected '('", 0, s)
    close = s.find(")")
    if close < 0:
        raise MalformedLine("missing ')'", len(s), s)
    stamp = s[1:close]
    dot = stamp.find(".")
    if dot < 1:
        raise MalformedLine("timestamp needs '<seconds>.<micros>'", 1, s)
    secs, micros = stamp[:dot], stamp[dot + 1:]
    if not secs.isdigit() or not secs.isascii():
        raise MalformedLine("seconds must be decimal digits", 1, s)
    if len(micros) != 6 or not micros.isdigit() or not micros.isascii():
        raise MalformedLine("microseconds must be exactly 6 digits", dot + 2, s)
    pos = close + 1
    if pos >= len(s) or s[pos] != " ":
        raise MalformedLine("expected ' ' after timestamp", pos, s)
    pos += 1
    sp = s.find(" ", pos)
    if sp <= pos:
        raise MalformedLine("missing bus name", pos, s)
    bus = s[pos:sp]
    pos = sp + 1
    hash_at = s.find("#", pos)
    if hash_at < 0:
        raise MalformedLine("missing '#'", len(s), s)
    ident = s[pos:hash_at]
    if len(ident) != 3 or not set(ident) <= _HEX:
        raise MalformedLine("identifier must be 3 hex digits", pos, s)
    can_id = int(ident, 16)
    if can_id > MAX_ID:
        raise MalformedLine(f"identifier {ident} exceeds 11 bits", pos, s)
    hexdata = s[hash_at + 1:]
    for i, ch in enumerate(hexdata):
        if ch not in _HEX:
            raise MalformedLine("payload must be hex", hash_at + 1 + i, s)
    if len(hexdata) % 2:
        raise MalformedLine("payload has an odd number of hex digits", len(s), s)
    if len(hexdata) > 2 * MAX_DLC:
        raise BadDlc(f"payload of {len(hexdata) // 2} bytes exceeds {MAX_DLC}")
    return CanFrame(can_id, bytes.fromhex(hexdata), int(secs) * 1_000_000 + int(micros), bus)


def serialize_log_line(frame: CanFrame) -> str:
    secs, micros = divmod(frame.timestamp_us, 1_000_000)
    return f"({secs:010d}.{micros:06d}) {frame.bus} {frame.id:03x}#{frame.data.hex()}"


def iter_log(lines: Iterable[str]) -> Iterator[CanFrame]:
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            yield parse_log_line(line)
        except MalformedLine as exc:
            exc.context["line_number"] = lineno
            raise


def read_log(path: str | Path) -> list[CanFrame]:
    with open(path, encoding="utf-8") as fh:
        return list(iter_log(fh))


def write_log(path: str | Path, frames: Iterable[CanFrame]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for frame in frames:
            fh.write(serialize_log_line(frame) + "\n")


def load_signal_db(path: str | Path) -> dict[str, SignalSpec]:
    """Read a JSON object mapping signal name to :class:`SignalSpec` fields."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    try:
        return {name: SignalSpec(**fields) for name, fields in raw.items()}
    except TypeError as exc:
        raise ConfigError(f"bad signal database {path}: {exc}") from exc
