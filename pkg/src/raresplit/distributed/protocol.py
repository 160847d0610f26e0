"""Binary messages exchanged between the coordinator and its clients.

Frame::

    magic  b"RSPL"
    u16    protocol version
    u8     tag
    u32    payload length
    ...    payload

All integers little-endian.  Strings and byte blobs are a u32 length
followed by the raw bytes (strings UTF-8).  A rational is an i64
numerator and a u64 denominator.  Product states travel as opaque blobs;
their layout is fixed by :meth:`raresplit.product.Problem.encode_product`.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from fractions import Fraction

__all__ = [
    "MAGIC", "VERSION", "HEADER", "Tag", "ProtocolError", "Init", "RunToLevel", "LevelReport",
    "StateRequest", "StateTransfer", "ReplaceSimulation", "Final", "Error", "WireMessage",
    "encode", "decode", "decode_header", "MAX_PAYLOAD",
]

MAGIC = b"RSPL"
VERSION = 1
HEADER = struct.Struct("<4sHBI")
MAX_PAYLOAD = 1 << 30


class ProtocolError(ValueError):
    pass


class Tag(enum.IntEnum):
    INIT = 1
    RUN_TO_LEVEL = 2
    LEVEL_REPORT = 3
    STATE_REQUEST = 4
    STATE_TRANSFER = 5
    REPLACE_SIMULATION = 6
    FINAL = 7
    ERROR = 8


@dataclass(frozen=True)
class Init:
    model: str
    formula: str
    score: str
    threshold: Fraction
    levels: tuple
    n: int
    client_id: int
    seed: int
    tag = Tag.INIT


@dataclass(frozen=True)
class RunToLevel:
    index: int
    level: Fraction
    tag = Tag.RUN_TO_LEVEL


@dataclass(frozen=True)
class LevelReport:
    index: int
    count: int
    tag = Tag.LEVEL_REPORT


@dataclass(frozen=True)
class StateRequest:
    count: int
    tag = Tag.STATE_REQUEST


@dataclass(frozen=True)
class StateTransfer:
    states: tuple  # of bytes
    tag = Tag.STATE_TRANSFER


@dataclass(frozen=True)
class ReplaceSimulation:
    ordinal: int
    state: bytes
    tag = Tag.REPLACE_SIMULATION


@dataclass(frozen=True)
class Final:
    steps: int
    note: str = ""
    tag = Tag.FINAL


@dataclass(frozen=True)
class Error:
    code: int
    message: str
    tag = Tag.ERROR


WireMessage = (Init, RunToLevel, LevelReport, StateRequest, StateTransfer,
               ReplaceSimulation, Final, Error)


# -- payload primitives --------------------------------------------------------

class _Writer:
    def __init__(self):
        self.buf = bytearray()

    def u8(self, v):
        self.buf += struct.pack("<B", v)

    def u16(self, v):
        self.buf += struct.pack("<H", v)

    def u32(self, v):
        self.buf += struct.pack("<I", v)

    def u64(self, v):
        self.buf += struct.pack("<Q", v)

    def blob(self, b: bytes):
        self.u32(len(b))
        self.buf += b

    def text(self, s: str):
        self.blob(s.encode("utf-8"))

    def rational(self, q):
        q = Fraction(q)
        self.buf += struct.pack("<qQ", q.numerator, q.denominator)


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def _take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise ProtocolError("payload truncated")
        v = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return v

    def u8(self):
        return self._take("<B")[0]

    def u16(self):
        return self._take("<H")[0]

    def u32(self):
        return self._take("<I")[0]

    def u64(self):
        return self._take("<Q")[0]

    def blob(self) -> bytes:
        n = self.u32()
        if self.pos + n > len(self.data):
            raise ProtocolError("blob runs past the payload")
        b = bytes(self.data[self.pos:self.pos + n])
        self.pos += n
        return b

    def text(self) -> str:
        try:
            return self.blob().decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ProtocolError(f"bad UTF-8 string: {exc}") from None

    def rational(self) -> Fraction:
        num, den = self._take("<qQ")
        if den == 0:
            raise ProtocolError("rational with zero denominator")
        return Fraction(num, den)

    def end(self):
        if self.pos != len(self.data):
            raise ProtocolError(f"{len(self.data) - self.pos} trailing payload bytes")


def _payload(msg) -> bytes:
    w = _Writer()
    if isinstance(msg, Init):
        w.text(msg.model)
        w.text(msg.formula)
        w.text(msg.score)
        w.rational(msg.threshold)
        w.u32(len(msg.levels))
        for v in msg.levels:
            w.rational(v)
        w.u32(msg.n)
        w.u32(msg.client_id)
        w.u64(msg.seed)
    elif isinstance(msg, RunToLevel):
        w.u32(msg.index)
        w.rational(msg.level)
    elif isinstance(msg, LevelReport):
        w.u32(msg.index)
        w.u32(msg.count)
    elif isinstance(msg, StateRequest):
        w.u32(msg.count)
    elif isinstance(msg, StateTransfer):
        w.u32(len(msg.states))
        for s in msg.states:
            w.blob(s)
    elif isinstance(msg, ReplaceSimulation):
        w.u32(msg.ordinal)
        w.blob(msg.state)
    elif isinstance(msg, Final):
        w.u64(msg.steps)
        w.text(msg.note)
    elif isinstance(msg, Error):
        w.u16(msg.code)
        w.text(msg.message)
    else:
        raise TypeError(f"not a wire message: {msg!r}")
    return bytes(w.buf)


def encode(msg) -> bytes:
    try:
        payload = _payload(msg)
    except struct.error as exc:
        raise ProtocolError(f"field out of range in {type(msg).__name__}: {exc}") from None
    return HEADER.pack(MAGIC, VERSION, int(msg.tag), len(payload)) + payload


def decode_header(head: bytes) -> tuple:
    """``(tag, payload length)`` from the fixed-size header."""
    if len(head) != HEADER.size:
        raise ProtocolError("short header")
    magic, version, tag, length = HEADER.unpack(head)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ProtocolError(f"protocol version {version}, expected {VERSION}")
    try:
        tag = Tag(tag)
    except ValueError:
        raise ProtocolError(f"unknown tag {tag}") from None
    if length > MAX_PAYLOAD:
        raise ProtocolError(f"payload of {length} bytes exceeds the limit")
    return tag, length


def decode(frame: bytes):
    tag, length = decode_header(bytes(frame[:HEADER.size]))
    if len(frame) != HEADER.size + length:
        raise ProtocolError(f"frame holds {len(frame) - HEADER.size} payload bytes, header says {length}")
    return decode_payload(tag, bytes(frame[HEADER.size:]))


def decode_payload(tag: Tag, payload: bytes):
    r = _Reader(payload)
    if tag is Tag.INIT:
        model, formula, score = r.text(), r.text(), r.text()
        thr = r.rational()
        levels = tuple(r.rational() for _ in range(r.u32()))
        msg = Init(model, formula, score, thr, levels, r.u32(), r.u32(), r.u64())
    elif tag is Tag.RUN_TO_LEVEL:
        msg = RunToLevel(r.u32(), r.rational())
    elif tag is Tag.LEVEL_REPORT:
        msg = LevelReport(r.u32(), r.u32())
    elif tag is Tag.STATE_REQUEST:
        msg = StateRequest(r.u32())
    elif tag is Tag.STATE_TRANSFER:
        count = r.u32()
        if count > len(payload):
            raise ProtocolError("state count exceeds payload size")
        msg = StateTransfer(tuple(r.blob() for _ in range(count)))
    elif tag is Tag.REPLACE_SIMULATION:
        msg = ReplaceSimulation(r.u32(), r.blob())
    elif tag is Tag.FINAL:
        msg = Final(r.u64(), r.text())
    else:
        msg = Error(r.u16(), r.text())
    r.end()
    return msg
