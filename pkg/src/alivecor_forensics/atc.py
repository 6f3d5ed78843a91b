"""Reader and writer for the chunked ``.atc`` ECG container.

Layout (all integers little-endian)::

    0x00  8 bytes   magic  b"ALIVE\\0\\0\\0"
    0x08  u32       format version (3 observed)
    0x0C  repeated: 4-byte chunk id, u32 payload length, payload

Only the ``info`` chunk is decoded. Every other chunk, including the sample
data, is carried as opaque bytes so that files round-trip exactly.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field

from .errors import BadMagic, LengthMismatch, NotInfoChunk, TruncatedPreamble, UnparseableRaw
from .evidence import Anomaly, Encoding, ForensicTimestamp

__all__ = [
    "ATC_MAGIC",
    "INFO_CHUNK_LENGTH",
    "AtcChunk",
    "AtcFile",
    "InfoChunk",
    "build_info_payload",
    "parse_atc",
    "parse_info_chunk",
    "serialize_atc",
]

ATC_MAGIC = b"ALIVE\x00\x00\x00"
EXPECTED_VERSION = 3
PREAMBLE = struct.Struct("<8sI")
CHUNK_HEADER = struct.Struct("<4sI")
INFO_ID = b"info"
INFO_CHUNK_LENGTH = 264
DATETIME_WIDTH = 32
UUID_WIDTH = 40
STRINGS_OFFSET = DATETIME_WIDTH + UUID_WIDTH

UUID_RE = re.compile(r"^[0-9a-fA-F]{8}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{12}$")


@dataclass(frozen=True)
class AtcChunk:
    chunk_id: bytes
    length: int
    payload: bytes

    @property
    def name(self) -> str:
        return self.chunk_id.decode("latin-1")

    @classmethod
    def make(cls, chunk_id: bytes | str, payload: bytes) -> "AtcChunk":
        if isinstance(chunk_id, str):
            chunk_id = chunk_id.encode("ascii")
        return cls(chunk_id, len(payload), payload)


@dataclass(frozen=True)
class AtcFile:
    magic: bytes = ATC_MAGIC
    format_version: int = EXPECTED_VERSION
    chunks: tuple[AtcChunk, ...] = ()
    # bytes of an incomplete final chunk, kept so nothing read is lost
    truncated_tail: bytes = b""
    warnings: tuple[Anomaly, ...] = field(default=(), compare=False)

    def chunk(self, chunk_id: bytes | str) -> AtcChunk | None:
        if isinstance(chunk_id, str):
            chunk_id = chunk_id.encode("ascii")
        for c in self.chunks:
            if c.chunk_id == chunk_id:
                return c
        return None

    @property
    def info(self) -> "InfoChunk | None":
        c = self.chunk(INFO_ID)
        return parse_info_chunk(c) if c is not None else None


def parse_atc(data: bytes) -> AtcFile:
    data = bytes(data)
    if len(data) < PREAMBLE.size:
        raise TruncatedPreamble(f"need {PREAMBLE.size} bytes, got {len(data)}")
    magic, version = PREAMBLE.unpack_from(data, 0)
    if magic != ATC_MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    warnings = []
    if version != EXPECTED_VERSION:
        warnings.append(Anomaly("UnexpectedVersion", f"format version {version}, expected {EXPECTED_VERSION}"))

    chunks = []
    pos = PREAMBLE.size
    end = len(data)
    tail = b""
    while pos < end:
        if end - pos < CHUNK_HEADER.size:
            tail = data[pos:]
            warnings.append(Anomaly("Truncation", f"partial chunk header at 0x{pos:X} ({len(tail)} bytes salvaged)"))
            break
        cid, length = CHUNK_HEADER.unpack_from(data, pos)
        body = pos + CHUNK_HEADER.size
        if body + length > end:
            tail = data[pos:]
            warnings.append(Anomaly(
                "Truncation",
                f"chunk {cid!r} at 0x{pos:X} declares {length} bytes, {end - body} present",
            ))
            break
        chunks.append(AtcChunk(cid, length, data[body:body + length]))
        pos = body + length
    return AtcFile(magic, version, tuple(chunks), tail, tuple(warnings))


def serialize_atc(atc: AtcFile) -> bytes:
    if len(atc.magic) != 8:
        raise LengthMismatch("magic must be 8 bytes")
    out = [PREAMBLE.pack(atc.magic, atc.format_version)]
    for c in atc.chunks:
        if len(c.chunk_id) != 4:
            raise LengthMismatch(f"chunk id {c.chunk_id!r} is not 4 bytes")
        if len(c.payload) != c.length:
            raise LengthMismatch(f"chunk {c.chunk_id!r} declares {c.length} bytes, payload has {len(c.payload)}")
        out.append(CHUNK_HEADER.pack(c.chunk_id, c.length))
        out.append(c.payload)
    out.append(atc.truncated_tail)
    return b"".join(out)


@dataclass(frozen=True)
class InfoChunk:
    recorded_at_text: str
    uuid_text: str
    recorder_info: tuple[str, ...] = ()
    trailing_raw: bytes = b""
    raw: bytes = b""
    warnings: tuple[Anomaly, ...] = field(default=(), compare=False)

    @property
    def recorded_at(self) -> ForensicTimestamp | None:
        """Header datetime, or None when it does not decode."""
        ts = ForensicTimestamp.lenient(self.recorded_at_text, Encoding.ISO8601_WITH_OFFSET, source_field="atc:info.datetime")
        return ts if ts.resolved else None

    @property
    def uuid_valid(self) -> bool:
        return bool(UUID_RE.match(self.uuid_text))


def _cstr(buf: bytes) -> bytes:
    return buf.split(b"\x00", 1)[0]


def _text(buf: bytes) -> str:
    return buf.decode("utf-8", "replace")


def parse_info_chunk(chunk: AtcChunk) -> InfoChunk:
    if chunk.chunk_id != INFO_ID:
        raise NotInfoChunk(f"chunk id is {chunk.chunk_id!r}")
    payload = chunk.payload
    warnings = []
    if len(payload) == INFO_CHUNK_LENGTH:
        dt = _text(_cstr(payload[:DATETIME_WIDTH]))
        uid = _text(_cstr(payload[DATETIME_WIDTH:STRINGS_OFFSET]))
        rest = payload[STRINGS_OFFSET:]
    else:
        warnings.append(Anomaly("InfoLayoutFallback", f"info payload is {len(payload)} bytes, not {INFO_CHUNK_LENGTH}; scanning for NUL-delimited fields"))
        parts = [p for p in payload.split(b"\x00") if p]
        dt = _text(parts[0]) if parts else ""
        uid = _text(parts[1]) if len(parts) > 1 else ""
        rest = b"\x00".join(parts[2:]) + (b"\x00" if len(parts) > 2 else b"")

    segments = rest.split(b"\x00")
    trailing = segments.pop()  # bytes after the last NUL
    strings = tuple(_text(s) for s in segments if s)

    if not dt:
        warnings.append(Anomaly("EmptyDatetime", "info datetime field is empty"))
    else:
        try:
            ForensicTimestamp(dt, Encoding.ISO8601_WITH_OFFSET)
        except UnparseableRaw as exc:
            warnings.append(Anomaly("BadDatetime", str(exc)))
    if not uid:
        warnings.append(Anomaly("EmptyUuid", "info UUID field is empty"))
    elif not UUID_RE.match(uid):
        warnings.append(Anomaly("BadUuid", f"info UUID field {uid!r} is not 8-4-4-4-12 hex"))
    return InfoChunk(dt, uid, strings, trailing, payload, tuple(warnings))


def build_info_payload(recorded_at_text: str, uuid_text: str, recorder_info=(), length: int = INFO_CHUNK_LENGTH) -> bytes:
    """Lay out an info payload with the fixed-width datetime and UUID fields."""
    dt = recorded_at_text.encode("utf-8")
    uid = uuid_text.encode("utf-8")
    if len(dt) >= DATETIME_WIDTH or len(uid) >= UUID_WIDTH:
        raise LengthMismatch("datetime or UUID text does not fit its field")
    body = dt.ljust(DATETIME_WIDTH, b"\x00") + uid.ljust(UUID_WIDTH, b"\x00")
    body += b"".join(s.encode("utf-8") + b"\x00" for s in recorder_info)
    if len(body) > length:
        raise LengthMismatch(f"info fields need {len(body)} bytes, chunk length is {length}")
    return body.ljust(length, b"\x00")
