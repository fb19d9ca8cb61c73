"""Framed byte-stream codec for the classical sifting channel.

Frame layout (all integers big-endian)::

    offset  size  field
    0       2     magic 0x51 0x4B ("QK")
    2       1     version, currently 1
    3       1     message type
    4       4     payload length, at most 16 MiB
    8       n     payload

Payloads:

    HELLO             16-byte session id, u64 gate count
    DETECTIONS        varint pair count, then (gap, run) varint pairs
                      describing the detected-gate bitmap from gate 0
    BOB_BASES         u32 count, bits packed MSB first
    MATCH_MASK        u32 count, bits packed MSB first
    QBER_SAMPLE_REQ   varint count, then gate indices as varint deltas
    QBER_SAMPLE_BITS  u32 count, bits packed MSB first
    QBER_REPORT       u64 numerator, u64 denominator
    BYE               u8 reason code

Varints are unsigned LEB128. Encodings are canonical, so
``decode_frame(encode_frame(m)) == m`` byte for byte.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import Iterable, Union

__all__ = [
    "MAGIC",
    "VERSION",
    "MAX_PAYLOAD",
    "HEADER",
    "MsgType",
    "ByeReason",
    "FrameError",
    "BadMagic",
    "BadVersion",
    "IncompleteFrame",
    "OversizeFrame",
    "UnknownMessageType",
    "MalformedPayload",
    "Hello",
    "Detections",
    "BobBases",
    "MatchMask",
    "QberSampleReq",
    "QberSampleBits",
    "QberReport",
    "Bye",
    "Message",
    "encode_frame",
    "decode_frame",
    "FrameReader",
    "pack_bits",
    "unpack_bits",
]

MAGIC = b"QK"
VERSION = 1
MAX_PAYLOAD = 16 * 1024 * 1024
HEADER = struct.Struct(">2sBBI")


class MsgType(enum.IntEnum):
    HELLO = 0x01
    DETECTIONS = 0x02
    BOB_BASES = 0x03
    MATCH_MASK = 0x04
    QBER_SAMPLE_REQ = 0x05
    QBER_SAMPLE_BITS = 0x06
    QBER_REPORT = 0x07
    BYE = 0x08


class ByeReason(enum.IntEnum):
    NORMAL = 0
    UNEXPECTED_MESSAGE = 1
    HELLO_MISMATCH = 2
    MALFORMED = 3
    INCONSISTENT = 4


class FrameError(Exception):
    """Base class for codec failures."""


class BadMagic(FrameError):
    pass


class BadVersion(FrameError):
    pass


class IncompleteFrame(FrameError):
    """Not enough bytes yet; nothing was consumed."""


class OversizeFrame(FrameError):
    pass


class UnknownMessageType(FrameError):
    pass


class MalformedPayload(FrameError):
    pass


@dataclass(frozen=True)
class Hello:
    session_id: bytes
    n_gates: int

    def __post_init__(self) -> None:
        if len(self.session_id) != 16:
            raise ValueError("session_id must be 16 bytes")
        if not 0 <= self.n_gates < 1 << 64:
            raise ValueError("n_gates out of u64 range")


@dataclass(frozen=True)
class Detections:
    gates: tuple[int, ...]

    def __post_init__(self) -> None:
        _check_increasing(self.gates)


@dataclass(frozen=True)
class BobBases:
    bases: tuple[int, ...]

    def __post_init__(self) -> None:
        _check_bits(self.bases)


@dataclass(frozen=True)
class MatchMask:
    mask: tuple[int, ...]

    def __post_init__(self) -> None:
        _check_bits(self.mask)


@dataclass(frozen=True)
class QberSampleReq:
    gates: tuple[int, ...]

    def __post_init__(self) -> None:
        _check_increasing(self.gates)


@dataclass(frozen=True)
class QberSampleBits:
    bits: tuple[int, ...]

    def __post_init__(self) -> None:
        _check_bits(self.bits)


@dataclass(frozen=True)
class QberReport:
    numerator: int
    denominator: int

    def __post_init__(self) -> None:
        if not 0 <= self.numerator <= self.denominator < 1 << 64:
            raise ValueError("need 0 <= numerator <= denominator < 2**64")

    @property
    def rate(self):
        """Error fraction, or None when no bits were sampled."""
        return self.numerator / self.denominator if self.denominator else None


@dataclass(frozen=True)
class Bye:
    reason: int = ByeReason.NORMAL

    def __post_init__(self) -> None:
        if not 0 <= self.reason <= 0xFF:
            raise ValueError("reason must fit in one byte")


Message = Union[
    Hello, Detections, BobBases, MatchMask, QberSampleReq, QberSampleBits, QberReport, Bye
]


def _check_bits(bits: tuple[int, ...]) -> None:
    if any(b not in (0, 1) for b in bits):
        raise ValueError("bit fields hold only 0 and 1")


def _check_increasing(gates: tuple[int, ...]) -> None:
    previous = -1
    for g in gates:
        if g <= previous:
            raise ValueError("gate indices must be strictly increasing and non-negative")
        previous = g


def _varint(value: int, out: bytearray) -> None:
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise MalformedPayload("payload ends early")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def varint(self) -> int:
        value = shift = 0
        while True:
            byte = self.take(1)[0]
            if byte == 0 and shift:
                # a zero continuation byte would make the encoding non-canonical
                raise MalformedPayload("non-canonical varint")
            value |= (byte & 0x7F) << shift
            if not byte & 0x80:
                return value
            shift += 7
            if shift > 63 * 2:
                raise MalformedPayload("varint too long")

    def done(self) -> None:
        if self.pos != len(self.data):
            raise MalformedPayload("trailing bytes in payload")


def pack_bits(bits: Iterable[int]) -> bytes:
    bits = list(bits)
    out = bytearray(struct.pack(">I", len(bits)))
    for start in range(0, len(bits), 8):
        byte = 0
        chunk = bits[start : start + 8]
        for b in chunk:
            byte = (byte << 1) | (1 if b else 0)
        out.append(byte << (8 - len(chunk)))
    return bytes(out)


def _unpack_bits(cur: _Cursor) -> tuple[int, ...]:
    (count,) = struct.unpack(">I", cur.take(4))
    raw = cur.take(-(-count // 8))
    bits = []
    for byte in raw:
        for shift in range(7, -1, -1):
            bits.append((byte >> shift) & 1)
    if any(bits[count:]):
        raise MalformedPayload("nonzero padding bits")
    return tuple(bits[:count])


def unpack_bits(payload: bytes) -> tuple[int, ...]:
    cur = _Cursor(payload)
    bits = _unpack_bits(cur)
    cur.done()
    return bits


def _encode_runs(gates: tuple[int, ...]) -> bytes:
    runs: list[tuple[int, int]] = []
    cursor = 0
    for g in gates:
        if runs and g == cursor:
            gap, length = runs[-1]
            runs[-1] = (gap, length + 1)
        else:
            runs.append((g - cursor, 1))
        cursor = g + 1
    out = bytearray()
    _varint(len(runs), out)
    for gap, length in runs:
        _varint(gap, out)
        _varint(length, out)
    return bytes(out)


def _decode_runs(cur: _Cursor) -> tuple[int, ...]:
    gates: list[int] = []
    cursor = 0
    for k in range(cur.varint()):
        gap, length = cur.varint(), cur.varint()
        if length == 0 or (k and gap == 0):
            raise MalformedPayload("non-canonical run encoding")
        start = cursor + gap
        gates.extend(range(start, start + length))
        cursor = start + length
    return tuple(gates)


def _encode_deltas(gates: tuple[int, ...]) -> bytes:
    out = bytearray()
    _varint(len(gates), out)
    previous = 0
    for g in gates:
        _varint(g - previous, out)
        previous = g
    return bytes(out)


def _decode_deltas(cur: _Cursor) -> tuple[int, ...]:
    gates = []
    previous = 0
    for k in range(cur.varint()):
        step = cur.varint()
        if k and step == 0:
            raise MalformedPayload("repeated sample gate")
        previous += step
        gates.append(previous)
    return tuple(gates)


def _payload(msg: Message) -> tuple[MsgType, bytes]:
    if isinstance(msg, Hello):
        return MsgType.HELLO, msg.session_id + struct.pack(">Q", msg.n_gates)
    if isinstance(msg, Detections):
        return MsgType.DETECTIONS, _encode_runs(msg.gates)
    if isinstance(msg, BobBases):
        return MsgType.BOB_BASES, pack_bits(msg.bases)
    if isinstance(msg, MatchMask):
        return MsgType.MATCH_MASK, pack_bits(msg.mask)
    if isinstance(msg, QberSampleReq):
        return MsgType.QBER_SAMPLE_REQ, _encode_deltas(msg.gates)
    if isinstance(msg, QberSampleBits):
        return MsgType.QBER_SAMPLE_BITS, pack_bits(msg.bits)
    if isinstance(msg, QberReport):
        return MsgType.QBER_REPORT, struct.pack(">QQ", msg.numerator, msg.denominator)
    if isinstance(msg, Bye):
        return MsgType.BYE, struct.pack(">B", msg.reason)
    raise TypeError(f"not a wire message: {msg!r}")


def _parse(kind: MsgType, payload: bytes) -> Message:
    cur = _Cursor(payload)
    try:
        if kind is MsgType.HELLO:
            sid = cur.take(16)
            (n,) = struct.unpack(">Q", cur.take(8))
            msg: Message = Hello(sid, n)
        elif kind is MsgType.DETECTIONS:
            msg = Detections(_decode_runs(cur))
        elif kind is MsgType.BOB_BASES:
            msg = BobBases(_unpack_bits(cur))
        elif kind is MsgType.MATCH_MASK:
            msg = MatchMask(_unpack_bits(cur))
        elif kind is MsgType.QBER_SAMPLE_REQ:
            msg = QberSampleReq(_decode_deltas(cur))
        elif kind is MsgType.QBER_SAMPLE_BITS:
            msg = QberSampleBits(_unpack_bits(cur))
        elif kind is MsgType.QBER_REPORT:
            num, den = struct.unpack(">QQ", cur.take(16))
            msg = QberReport(num, den)
        else:
            (reason,) = struct.unpack(">B", cur.take(1))
            msg = Bye(reason)
    except ValueError as exc:
        raise MalformedPayload(str(exc)) from exc
    cur.done()
    return msg


def encode_frame(msg: Message) -> bytes:
    kind, payload = _payload(msg)
    if len(payload) > MAX_PAYLOAD:
        raise OversizeFrame(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    return HEADER.pack(MAGIC, VERSION, kind, len(payload)) + payload


def _header(data) -> tuple[MsgType, int]:
    if len(data) < HEADER.size:
        raise IncompleteFrame(f"need {HEADER.size} header bytes, have {len(data)}")
    magic, version, kind, length = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != VERSION:
        raise BadVersion(f"unsupported version {version}")
    if length > MAX_PAYLOAD:
        raise OversizeFrame(f"declared length {length} exceeds {MAX_PAYLOAD}")
    try:
        msg_type = MsgType(kind)
    except ValueError:
        raise UnknownMessageType(f"unknown message type 0x{kind:02x}") from None
    return msg_type, length


def decode_frame(data: bytes) -> Message:
    """Decode exactly one complete frame."""
    kind, length = _header(data)
    end = HEADER.size + length
    if len(data) < end:
        raise IncompleteFrame(f"need {end} bytes, have {len(data)}")
    if len(data) > end:
        raise FrameError(f"{len(data) - end} bytes after the frame")
    return _parse(kind, bytes(data[HEADER.size : end]))


class FrameReader:
    """Accumulates stream bytes and yields whole messages."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> None:
        self._buf.extend(data)

    @property
    def pending(self) -> int:
        return len(self._buf)

    def next_message(self) -> Message:
        """Pop one message; raises IncompleteFrame, leaving the buffer intact."""
        kind, length = _header(self._buf)
        end = HEADER.size + length
        if len(self._buf) < end:
            raise IncompleteFrame(f"need {end} bytes, have {len(self._buf)}")
        payload = bytes(self._buf[HEADER.size : end])
        del self._buf[:end]
        return _parse(kind, payload)

    def needed(self) -> int:
        """Bytes still missing before the next frame is complete."""
        if len(self._buf) < HEADER.size:
            return HEADER.size - len(self._buf)
        _, length = _header(self._buf)
        return max(0, HEADER.size + length - len(self._buf))
