"""Request-response wire vocabulary and framing.

Frame layout: 4-byte big-endian length (tag byte + payload), 1 tag byte,
then the message fields in declared order.  Scalars are big-endian;
byte strings and text are 4-byte-length prefixed; lists are a 4-byte
count followed by the elements.  ``decode`` consumes exactly one frame
and leaves trailing bytes alone, so any prefix of a valid stream splits
into complete frames plus at most one partial.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

MAX_FRAME_LEN = 16 * 1024 * 1024

ROLE_FUZZING = 0
ROLE_EVALUATING = 1


class ProtocolError(ValueError):
    """Malformed frame: unknown tag, oversized length, bad field."""


class NeedMoreData(Exception):
    """The buffer does not yet hold a complete frame."""


def _enc_u(value: int, size: int) -> bytes:
    if value < 0 or value >= 1 << (8 * size):
        raise ProtocolError(f"unsigned value {value} out of range for {size} bytes")
    return value.to_bytes(size, "big")


def _enc_bytes(value: bytes) -> bytes:
    return _enc_u(len(value), 4) + value


def _enc_str(value: str) -> bytes:
    return _enc_bytes(value.encode("utf-8"))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ProtocolError("payload truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u(self, size: int) -> int:
        return int.from_bytes(self.take(size), "big")

    def bytes_(self) -> bytes:
        return self.take(self.u(4))

    def str_(self) -> str:
        return self.bytes_().decode("utf-8")

    def done(self) -> bool:
        return self.pos == len(self.buf)


def _encode_field(kind: str, value) -> bytes:
    if kind == "u8":
        return _enc_u(value, 1)
    if kind == "u32":
        return _enc_u(value, 4)
    if kind == "u64":
        return _enc_u(value, 8)
    if kind == "bytes":
        return _enc_bytes(value)
    if kind == "str":
        return _enc_str(value)
    if kind == "str_list":
        return _enc_u(len(value), 4) + b"".join(_enc_str(v) for v in value)
    if kind == "u32_list":
        return _enc_u(len(value), 4) + b"".join(_enc_u(v, 4) for v in value)
    if kind == "counters":
        items = sorted(value.items())
        return _enc_u(len(items), 4) + b"".join(
            _enc_str(k) + _enc_u(v, 8) for k, v in items
        )
    raise AssertionError(f"unknown field kind {kind}")


def _decode_field(kind: str, reader: _Reader):
    if kind == "u8":
        return reader.u(1)
    if kind == "u32":
        return reader.u(4)
    if kind == "u64":
        return reader.u(8)
    if kind == "bytes":
        return reader.bytes_()
    if kind == "str":
        return reader.str_()
    if kind == "str_list":
        return [reader.str_() for _ in range(reader.u(4))]
    if kind == "u32_list":
        return [reader.u(4) for _ in range(reader.u(4))]
    if kind == "counters":
        return {reader.str_(): reader.u(8) for _ in range(reader.u(4))}
    raise AssertionError(f"unknown field kind {kind}")


_REGISTRY: dict[int, type] = {}


def message(tag: int):
    def wrap(cls):
        cls = dataclass(cls)
        cls.TAG = tag
        if tag in _REGISTRY:
            raise AssertionError(f"duplicate tag {tag}")
        _REGISTRY[tag] = cls
        return cls
    return wrap


class Message:
    TAG: int
    FIELDS: tuple[tuple[str, str], ...] = ()

    def validate(self) -> None:
        pass


# --- scheduler <-> worker vocabulary -------------------------------------

@message(1)
class RequestTask(Message):
    worker_id: str
    FIELDS = (("worker_id", "str"),)

    def validate(self):
        if not self.worker_id:
            raise ProtocolError("worker_id must be non-empty")


@message(2)
class TaskAssignment(Message):
    seed_id: str
    energy: int
    FIELDS = (("seed_id", "str"), ("energy", "u32"))

    def validate(self):
        if self.energy < 1:
            raise ProtocolError("energy must be >= 1")


@message(3)
class NoTaskAvailable(Message):
    retry_after_ms: int
    FIELDS = (("retry_after_ms", "u32"),)


@message(4)
class UpdateSignal(Message):
    seed_id: str
    FIELDS = (("seed_id", "str"),)


@message(5)
class SetRole(Message):
    role: int
    FIELDS = (("role", "u8"),)

    def validate(self):
        if self.role not in (ROLE_FUZZING, ROLE_EVALUATING):
            raise ProtocolError(f"unknown role {self.role}")


@message(6)
class EvalBatchRequest(Message):
    worker_id: str
    max: int
    FIELDS = (("worker_id", "str"), ("max", "u32"))

    def validate(self):
        if not self.worker_id:
            raise ProtocolError("worker_id must be non-empty")
        if self.max < 1:
            raise ProtocolError("max must be >= 1")


@message(7)
class EvalBatch(Message):
    seed_ids: list[str]
    FIELDS = (("seed_ids", "str_list"),)

    def validate(self):
        if not self.seed_ids:
            raise ProtocolError("seed_ids must be non-empty")


@message(8)
class StatusReport(Message):
    worker_id: str
    counters: dict[str, int]
    FIELDS = (("worker_id", "str"), ("counters", "counters"))

    def validate(self):
        if not self.worker_id:
            raise ProtocolError("worker_id must be non-empty")


@message(9)
class Shutdown(Message):
    pass


# --- evaluator -> scheduler outcomes -------------------------------------

@message(10)
class SeedActivated(Message):
    """Announces an evaluated seed; carries the scheduling metadata and
    the covered edge ids (never the bitmap itself)."""

    seed_id: str
    length: int
    exec_time_us: int
    bitmap_size: int
    depth: int
    handicap: int
    discovered_at: int
    edges: list[int]
    FIELDS = (
        ("seed_id", "str"), ("length", "u32"), ("exec_time_us", "u64"),
        ("bitmap_size", "u32"), ("depth", "u32"), ("handicap", "u32"),
        ("discovered_at", "u64"), ("edges", "u32_list"),
    )


@message(11)
class SeedDiscarded(Message):
    seed_id: str
    FIELDS = (("seed_id", "str"),)


@message(12)
class EvalIdle(Message):
    worker_id: str
    FIELDS = (("worker_id", "str"),)


# --- store requests -------------------------------------------------------

@message(16)
class PutSeed(Message):
    content: bytes
    parent: str            # "" for initial corpus seeds
    discovered_at: int
    origin: str
    depth: int
    handicap: int
    bitmap_size: int
    exec_time_us: int
    fuzz_count: int
    favored: int
    state: int
    FIELDS = (
        ("content", "bytes"), ("parent", "str"), ("discovered_at", "u64"),
        ("origin", "str"), ("depth", "u32"), ("handicap", "u32"),
        ("bitmap_size", "u32"), ("exec_time_us", "u64"), ("fuzz_count", "u32"),
        ("favored", "u8"), ("state", "u8"),
    )


@message(17)
class PutSeedReply(Message):
    seed_id: str
    created: int
    FIELDS = (("seed_id", "str"), ("created", "u8"))


@message(18)
class GetSeed(Message):
    seed_id: str
    FIELDS = (("seed_id", "str"),)


@message(19)
class SeedData(Message):
    seed_id: str
    content: bytes
    parent: str
    discovered_at: int
    origin: str
    FIELDS = (
        ("seed_id", "str"), ("content", "bytes"), ("parent", "str"),
        ("discovered_at", "u64"), ("origin", "str"),
    )


@message(20)
class UpdateStatus(Message):
    seed_id: str
    fuzz_count_delta: int
    set_favored: int       # 0 leave, 1 set false, 2 set true
    FIELDS = (("seed_id", "str"), ("fuzz_count_delta", "u32"),
              ("set_favored", "u8"))


@message(21)
class StatusValue(Message):
    seed_id: str
    depth: int
    handicap: int
    bitmap_size: int
    exec_time_us: int
    fuzz_count: int
    favored: int
    state: int
    FIELDS = (
        ("seed_id", "str"), ("depth", "u32"), ("handicap", "u32"),
        ("bitmap_size", "u32"), ("exec_time_us", "u64"), ("fuzz_count", "u32"),
        ("favored", "u8"), ("state", "u8"),
    )


@message(22)
class PopPending(Message):
    max: int
    FIELDS = (("max", "u32"),)

    def validate(self):
        if self.max < 1:
            raise ProtocolError("max must be >= 1")


@message(23)
class PendingIds(Message):
    seed_ids: list[str]
    FIELDS = (("seed_ids", "str_list"),)


@message(24)
class DiscardSeed(Message):
    seed_id: str
    FIELDS = (("seed_id", "str"),)


@message(25)
class Ack(Message):
    pass


@message(26)
class PutCrash(Message):
    content: bytes
    parent: str
    outcome: str           # "crash" | "hang"
    discovered_at: int
    origin: str
    FIELDS = (
        ("content", "bytes"), ("parent", "str"), ("outcome", "str"),
        ("discovered_at", "u64"), ("origin", "str"),
    )

    def validate(self):
        if self.outcome not in ("crash", "hang"):
            raise ProtocolError(f"bad crash outcome {self.outcome!r}")


@message(27)
class ActivateSeed(Message):
    seed_id: str
    bitmap_size: int
    exec_time_us: int
    FIELDS = (("seed_id", "str"), ("bitmap_size", "u32"),
              ("exec_time_us", "u64"))


@message(28)
class ActiveList(Message):
    pass


@message(29)
class ActiveIds(Message):
    seed_ids: list[str]
    FIELDS = (("seed_ids", "str_list"),)


@message(30)
class ErrorReply(Message):
    code: str
    detail: str
    FIELDS = (("code", "str"), ("detail", "str"))


@message(31)
class StatsQuery(Message):
    pass


@message(32)
class StatsValue(Message):
    counters: dict[str, int]
    FIELDS = (("counters", "counters"),)


@message(33)
class GetStatus(Message):
    seed_id: str
    FIELDS = (("seed_id", "str"),)


def encode(msg: Message) -> bytes:
    """Deterministic frame bytes; decode(encode(m)) == m."""
    msg.validate()
    payload = bytearray([msg.TAG])
    for name, kind in msg.FIELDS:
        payload += _encode_field(kind, getattr(msg, name))
    if len(payload) > MAX_FRAME_LEN:
        raise ProtocolError("frame too large")
    return struct.pack(">I", len(payload)) + bytes(payload)


def decode(buf: bytes | bytearray | memoryview) -> tuple[Message, int]:
    """Decode one complete frame; returns (message, bytes_consumed).

    Raises NeedMoreData on a truncated frame and ProtocolError on unknown
    tags, oversized frames, or malformed payloads.  Trailing bytes beyond
    the frame are not consumed.
    """
    buf = bytes(buf)
    if len(buf) < 4:
        raise NeedMoreData
    (length,) = struct.unpack(">I", buf[:4])
    if length > MAX_FRAME_LEN:
        raise ProtocolError(f"frame length {length} exceeds limit")
    if length < 1:
        raise ProtocolError("empty frame")
    if len(buf) < 4 + length:
        raise NeedMoreData
    tag = buf[4]
    cls = _REGISTRY.get(tag)
    if cls is None:
        raise ProtocolError(f"unknown tag 0x{tag:02x}")
    reader = _Reader(buf[5 : 4 + length])
    values = {name: _decode_field(kind, reader) for name, kind in cls.FIELDS}
    if not reader.done():
        raise ProtocolError("trailing bytes inside frame")
    msg = cls(**values)
    msg.validate()
    return msg, 4 + length


class FrameDecoder:
    """Incremental decoder for a byte stream split across arbitrary reads."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[Message]:
        self._buf += data
        out = []
        while True:
            try:
                msg, used = decode(self._buf)
            except NeedMoreData:
                return out
            del self._buf[:used]
            out.append(msg)

    def pending_bytes(self) -> int:
        return len(self._buf)
