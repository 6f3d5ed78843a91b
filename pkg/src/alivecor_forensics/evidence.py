"""Platform-neutral evidence model shared by the extractors, timeline and reports.

Timestamps keep the value exactly as stored next to the encoding it was
decoded with, so every derived UTC instant can be re-derived and audited.
"""

from __future__ import annotations

import hashlib
import os
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from decimal import ROUND_HALF_EVEN, Decimal, InvalidOperation
from enum import Enum, IntEnum
from pathlib import Path, PurePosixPath
from typing import Any, Mapping

from .errors import (
    MissingOffset,
    NegativeValue,
    UnknownEncoding,
    UnparseableRaw,
    UnsupportedUnitPair,
)

__all__ = [
    "MAC_EPOCH_OFFSET_SECONDS",
    "Anomaly",
    "AppTimestamp",
    "BloodPressureRecord",
    "CaseFile",
    "Category",
    "EcgRecording",
    "Encoding",
    "EvidenceItem",
    "ForensicTimestamp",
    "Gender",
    "Orientation",
    "PatientProfile",
    "PatientSnapshot",
    "Platform",
    "ProfileFragment",
    "Provenance",
    "ReferralOrder",
    "Smoker",
    "WeightRecord",
    "convert_units",
    "format_utc",
    "normalize",
    "sha256_file",
    "to_local",
]

UTC = timezone.utc
UNIX_EPOCH = datetime(1970, 1, 1, tzinfo=UTC)
MAC_EPOCH = datetime(2001, 1, 1, tzinfo=UTC)
# 11,323 days between 1970-01-01 and 2001-01-01
MAC_EPOCH_OFFSET_SECONDS = 978_307_200


class Encoding(str, Enum):
    EPOCH_MILLIS_GMT = "EpochMillisGmt"
    EPOCH_SECONDS_GMT = "EpochSecondsGmt"
    MAC_ABSOLUTE_SECONDS = "MacAbsoluteSeconds"
    ISO8601_WITH_OFFSET = "Iso8601WithOffset"


class Platform(str, Enum):
    ANDROID = "Android"
    IOS = "Ios"


class Category(str, Enum):
    ATC_ECG = "AtcEcg"
    AUDIO_NOTE = "AudioNote"
    DATABASE = "Database"
    PREFS_XML = "PrefsXml"
    PLIST = "Plist"
    PDF_REFERRAL = "PdfReferral"
    UNKNOWN = "Unknown"


class Gender(IntEnum):
    FEMALE = 0
    MALE = 1


class Smoker(IntEnum):
    NO = 0
    YES = 1


class Orientation(IntEnum):
    CORRECT_SIDE_UP = 0
    UPSIDE_DOWN = 1


# --------------------------------------------------------------------------
# timestamps

_ISO_RE = re.compile(
    r"^(\d{4})-(\d{2})-(\d{2})T(\d{2}):(\d{2}):(\d{2})(?:\.(\d{1,9}))?"
    r"(?:(Z)|([+-])(\d{2}):(\d{2})(?::(\d{2}))?)$"
)


def _coerce_encoding(encoding: Encoding | str) -> Encoding:
    try:
        return Encoding(encoding)
    except ValueError:
        raise UnknownEncoding(f"unknown timestamp encoding {encoding!r}") from None


def _as_decimal(raw: Any) -> Decimal:
    if isinstance(raw, bool):
        raise UnparseableRaw(f"boolean is not a timestamp: {raw!r}")
    if isinstance(raw, int):
        return Decimal(raw)
    if isinstance(raw, float):
        if raw != raw or raw in (float("inf"), float("-inf")):
            raise UnparseableRaw(f"non-finite timestamp {raw!r}")
        # repr is the shortest string that round-trips, i.e. what was stored
        return Decimal(repr(raw))
    if isinstance(raw, Decimal):
        if not raw.is_finite():
            raise UnparseableRaw(f"non-finite timestamp {raw!r}")
        return raw
    if isinstance(raw, (str, bytes)):
        text = raw.decode("ascii", "replace") if isinstance(raw, bytes) else raw
        try:
            value = Decimal(text.strip())
        except InvalidOperation:
            raise UnparseableRaw(f"not a number: {raw!r}") from None
        if not value.is_finite():
            raise UnparseableRaw(f"non-finite timestamp {raw!r}")
        return value
    raise UnparseableRaw(f"unsupported raw type {type(raw).__name__}")


def _seconds_to_ms(seconds: Decimal) -> int:
    return int((seconds * 1000).to_integral_value(rounding=ROUND_HALF_EVEN))


def _from_epoch_ms(ms: int, raw: Any) -> datetime:
    try:
        return UNIX_EPOCH + timedelta(milliseconds=ms)
    except OverflowError:
        raise UnparseableRaw(f"timestamp out of range: {raw!r}") from None


def _parse_iso(raw: Any) -> tuple[datetime, int]:
    if not isinstance(raw, str):
        raise UnparseableRaw(f"ISO-8601 raw value must be text, got {type(raw).__name__}")
    m = _ISO_RE.match(raw.strip())
    if not m:
        raise UnparseableRaw(f"not an ISO-8601 timestamp with offset: {raw!r}")
    year, month, day, hour, minute, second = (int(g) for g in m.group(1, 2, 3, 4, 5, 6))
    frac = m.group(7) or ""
    ms = _seconds_to_ms(Decimal("0." + frac)) if frac else 0
    if m.group(8):
        offset = 0
    else:
        sign = -1 if m.group(9) == "-" else 1
        offset = sign * (int(m.group(10)) * 3600 + int(m.group(11)) * 60 + int(m.group(12) or 0))
    if abs(offset) >= 86400:
        raise UnparseableRaw(f"offset out of range in {raw!r}")
    try:
        wall = datetime(year, month, day, hour, minute, second, tzinfo=UTC)
        utc = wall + timedelta(milliseconds=ms) - timedelta(seconds=offset)
    except (ValueError, OverflowError) as exc:
        raise UnparseableRaw(f"invalid calendar value in {raw!r}: {exc}") from None
    return utc, offset


def decode_utc(raw: Any, encoding: Encoding | str) -> tuple[datetime, int | None]:
    """Decode ``raw`` under ``encoding``; returns the UTC instant and any embedded offset."""
    enc = _coerce_encoding(encoding)
    if enc is Encoding.ISO8601_WITH_OFFSET:
        return _parse_iso(raw)
    value = _as_decimal(raw)
    if enc is Encoding.EPOCH_MILLIS_GMT:
        ms = int(value.to_integral_value(rounding=ROUND_HALF_EVEN))
    elif enc is Encoding.EPOCH_SECONDS_GMT:
        ms = _seconds_to_ms(value)
    else:
        ms = _seconds_to_ms(value + MAC_EPOCH_OFFSET_SECONDS)
    return _from_epoch_ms(ms, raw), None


@dataclass(frozen=True)
class ForensicTimestamp:
    """A stored timestamp value plus the encoding used to read it.

    ``utc`` is derived from ``raw`` and ``encoding`` only. Construct with
    :meth:`lenient` to keep values that fail to decode; those carry
    ``utc=None`` and the decoding error text so the timeline can quarantine
    them.
    """

    raw: Any
    encoding: Encoding
    offset_seconds: int | None = None
    source_field: str = ""
    utc: datetime | None = field(init=False, compare=False)
    error: str | None = field(init=False, default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "encoding", _coerce_encoding(self.encoding))
        utc, embedded = decode_utc(self.raw, self.encoding)
        object.__setattr__(self, "utc", utc)
        if embedded is not None:
            object.__setattr__(self, "offset_seconds", embedded)

    @classmethod
    def lenient(cls, raw, encoding, offset_seconds=None, source_field=""):
        try:
            return cls(raw, encoding, offset_seconds, source_field)
        except UnparseableRaw as exc:
            ts = object.__new__(cls)
            object.__setattr__(ts, "raw", raw)
            object.__setattr__(ts, "encoding", _coerce_encoding(encoding))
            object.__setattr__(ts, "offset_seconds", offset_seconds)
            object.__setattr__(ts, "source_field", source_field)
            object.__setattr__(ts, "utc", None)
            object.__setattr__(ts, "error", str(exc))
            return ts

    @classmethod
    def from_utc(cls, utc: datetime, encoding, offset_seconds=None, source_field=""):
        """Encode ``utc`` as ``encoding`` would store it (used by the fixture generator)."""
        return cls(encode_utc(utc, encoding, offset_seconds), encoding, offset_seconds, source_field)

    @property
    def epoch_ms(self) -> int | None:
        if self.utc is None:
            return None
        return (self.utc - UNIX_EPOCH) // timedelta(milliseconds=1)

    @property
    def resolved(self) -> bool:
        return self.utc is not None


def encode_utc(utc: datetime, encoding, offset_seconds: int | None = None):
    """Inverse of :func:`decode_utc` at millisecond precision.

    Second-based encodings yield an ``int`` for whole seconds and a ``float``
    otherwise, matching what an SQLite REAL/INTEGER column would hold.
    """
    enc = _coerce_encoding(encoding)
    ms = (utc - UNIX_EPOCH) // timedelta(milliseconds=1)
    if enc is Encoding.EPOCH_MILLIS_GMT:
        return ms
    if enc is Encoding.ISO8601_WITH_OFFSET:
        if offset_seconds is None:
            raise MissingOffset("ISO-8601 rendering needs an offset")
        return _render_local(ms, offset_seconds)
    if enc is Encoding.MAC_ABSOLUTE_SECONDS:
        ms -= MAC_EPOCH_OFFSET_SECONDS * 1000
    if ms % 1000 == 0:
        return ms // 1000
    return float(Decimal(ms) / 1000)


def normalize(ts: ForensicTimestamp) -> datetime:
    """Recompute the UTC instant of ``ts`` from its raw value and encoding."""
    utc, _ = decode_utc(ts.raw, ts.encoding)
    return utc


def _format_offset(offset: int) -> str:
    sign = "-" if offset < 0 else "+"
    hours, rem = divmod(abs(offset), 3600)
    minutes, seconds = divmod(rem, 60)
    text = f"{sign}{hours:02d}:{minutes:02d}"
    if seconds:
        text += f":{seconds:02d}"
    return text


def _render_local(epoch_ms: int, offset: int) -> str:
    local = UNIX_EPOCH + timedelta(milliseconds=epoch_ms + offset * 1000)
    return local.strftime("%Y-%m-%dT%H:%M:%S") + f".{local.microsecond // 1000:03d}" + _format_offset(offset)


def to_local(ts: ForensicTimestamp) -> str:
    """Render ``ts`` in its recorded local zone, e.g. ``2018-05-24T14:55:59.115-05:00``."""
    if ts.offset_seconds is None:
        raise MissingOffset(f"no zone offset recorded for {ts.source_field or 'timestamp'}")
    if ts.utc is None:
        raise UnparseableRaw(ts.error or "unresolved timestamp")
    return _render_local(ts.epoch_ms, ts.offset_seconds)


def format_utc(dt: datetime) -> str:
    """ISO-8601 UTC with millisecond precision and a ``Z`` suffix."""
    dt = dt.astimezone(UTC)
    return dt.strftime("%Y-%m-%dT%H:%M:%S") + f".{dt.microsecond // 1000:03d}Z"


# --------------------------------------------------------------------------
# units

_LB_KG = Decimal("0.45359237")
_FT_CM = Decimal("30.48")
_IN_CM = Decimal("2.54")
_FACTORS = {
    ("lb", "kg"): _LB_KG,
    ("ft", "cm"): _FT_CM,
    ("in", "cm"): _IN_CM,
}


def convert_units(value, from_unit: str, to_unit: str):
    """Convert between the imperial units the app accepts and the metric units it stores.

    ``Decimal`` input is converted exactly; any other real number is treated
    as a float.
    """
    pair = (from_unit.lower(), to_unit.lower())
    if pair in _FACTORS:
        factor, inverse = _FACTORS[pair], False
    elif pair[::-1] in _FACTORS:
        factor, inverse = _FACTORS[pair[::-1]], True
    else:
        raise UnsupportedUnitPair(f"cannot convert {from_unit} to {to_unit}")
    if value < 0:
        raise NegativeValue(f"negative quantity {value!r}")
    if isinstance(value, Decimal):
        return value / factor if inverse else value * factor
    f = float(factor)
    return float(value) / f if inverse else float(value) * f


# --------------------------------------------------------------------------
# evidence items and provenance

_READ_CHUNK = 1 << 20


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(_READ_CHUNK), b""):
            h.update(block)
    return h.hexdigest()


def _check_relative(path: str) -> str:
    if "\\" in path:
        raise ValueError(f"evidence paths use forward slashes: {path!r}")
    pure = PurePosixPath(path)
    if pure.is_absolute() or ".." in pure.parts or path in ("", "."):
        raise ValueError(f"path escapes the dump root: {path!r}")
    return path


@dataclass(frozen=True)
class EvidenceItem:
    dump_relative_path: str
    byte_size: int
    digest: str
    category: Category
    platform: Platform

    def __post_init__(self):
        _check_relative(self.dump_relative_path)
        if self.byte_size < 0:
            raise ValueError("byte_size must be non-negative")
        if not re.fullmatch(r"[0-9a-f]{64}", self.digest):
            raise ValueError(f"digest must be 64 lowercase hex chars: {self.digest!r}")

    @classmethod
    def from_file(cls, dump_root: Path, path: Path, category: Category, platform: Platform) -> "EvidenceItem":
        rel = path.relative_to(dump_root).as_posix()
        return cls(rel, path.stat().st_size, sha256_file(path), Category(category), Platform(platform))

    def verify(self, dump_root: str | os.PathLike) -> bool:
        """True when the file still hashes to the recorded digest."""
        path = Path(dump_root) / self.dump_relative_path
        try:
            return sha256_file(path) == self.digest
        except OSError:
            return False


@dataclass(frozen=True, order=True)
class Provenance:
    """Where a value came from: an evidence path and a table/column or file key."""

    path: str
    field: str = ""

    def __str__(self):
        return f"{self.path}#{self.field}" if self.field else self.path


@dataclass(frozen=True)
class Anomaly:
    """A structured extraction warning. Suspicious data is reported, never repaired."""

    code: str
    message: str
    provenance: Provenance | None = None


# --------------------------------------------------------------------------
# records

@dataclass(frozen=True)
class PatientSnapshot:
    """Per-recording copy of profile values as stored alongside each ECG row."""

    first_name: str | None = None
    last_name: str | None = None
    dob: ForensicTimestamp | None = None
    height_cm: float | None = None
    weight_kg: float | None = None
    gender: Gender | None = None
    smoker: Smoker | None = None


@dataclass(frozen=True)
class ProfileFragment:
    """Profile values recovered from one file, with the key each value came from."""

    provenance: Provenance
    values: Mapping[str, Any]
    keys: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class PatientProfile:
    first_name: str | None = None
    last_name: str | None = None
    dob: ForensicTimestamp | None = None
    height_cm: float | None = None
    weight_kg: float | None = None
    gender: Gender | None = None
    smoker: Smoker | None = None
    email: str | None = None
    country: str | None = None
    medical_conditions: tuple[str, ...] = ()
    provenance: Mapping[str, Provenance] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("height_cm", "weight_kg"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ValueError(f"{name} must be positive, got {value!r}")

    @classmethod
    def merge(cls, fragments: list[ProfileFragment]) -> "PatientProfile | None":
        """First fragment wins per field; disagreements are left to the consistency checks."""
        values: dict[str, Any] = {}
        prov: dict[str, Provenance] = {}
        for frag in fragments:
            for name, value in frag.values.items():
                if value is None or name in values:
                    continue
                values[name] = value
                prov[name] = Provenance(frag.provenance.path, frag.keys.get(name, name))
        if not values:
            return None
        if "medical_conditions" in values:
            values["medical_conditions"] = tuple(values["medical_conditions"])
        return cls(**values, provenance=prov)


@dataclass(frozen=True)
class EcgRecording:
    uuid: str
    recorded_at: ForensicTimestamp
    duration_ms: int | None
    heart_rate_bpm: int | None
    inverted: Orientation | None
    has_audio: bool | None
    atc_filename: str
    provenance: Provenance
    server_id: str | None = None
    comment: str | None = None
    synced_at: ForensicTimestamp | None = None
    is_resting: bool | None = None
    mc_angina: bool | None = None
    condition_flags: Mapping[str, bool] = field(default_factory=dict)
    patient_snapshot: PatientSnapshot = field(default_factory=PatientSnapshot)
    db_key: int | None = None
    audio_item: EvidenceItem | None = None
    atc_items: tuple[EvidenceItem, ...] = ()


@dataclass(frozen=True)
class BloodPressureRecord:
    recorded_at: ForensicTimestamp
    deleted: bool
    systolic: int | None
    diastolic: int | None
    provenance: Provenance
    heart_rate_bpm: int | None = None
    source: str = ""
    notes: str | None = None

    @property
    def degenerate(self) -> bool:
        s, d = self.systolic, self.diastolic
        return s is None or d is None or not (s > d > 0)


@dataclass(frozen=True)
class WeightRecord:
    recorded_at: ForensicTimestamp
    weight_kg: float | None
    height_cm: float | None
    provenance: Provenance
    source: str = ""


@dataclass(frozen=True)
class ReferralOrder:
    ecg_ref: str | int
    requested_at: ForensicTimestamp
    provenance: Provenance
    result: str | None = None
    completed_at: ForensicTimestamp | None = None

    @property
    def inverted_times(self) -> bool:
        c = self.completed_at
        return bool(c and c.utc and self.requested_at.utc and c.utc < self.requested_at.utc)


@dataclass(frozen=True)
class AppTimestamp:
    """Application usage metadata such as first launch or last-recording markers."""

    key: str
    timestamp: ForensicTimestamp
    provenance: Provenance


@dataclass
class CaseFile:
    """Everything recovered from one application container."""

    platform: Platform
    app_root: str
    profile: PatientProfile | None = None
    profile_fragments: list[ProfileFragment] = field(default_factory=list)
    ecgs: list[EcgRecording] = field(default_factory=list)
    bps: list[BloodPressureRecord] = field(default_factory=list)
    weights: list[WeightRecord] = field(default_factory=list)
    orders: list[ReferralOrder] = field(default_factory=list)
    app_timestamps: list[AppTimestamp] = field(default_factory=list)
    app_metadata: dict[str, Any] = field(default_factory=dict)
    table_census: dict[str, int] = field(default_factory=dict)
    opaque_tables: list[str] = field(default_factory=list)
    opaque_keys: list[Provenance] = field(default_factory=list)
    items: list[EvidenceItem] = field(default_factory=list)
    warnings: list[Anomaly] = field(default_factory=list)

    def warn(self, code: str, message: str, provenance: Provenance | None = None) -> None:
        self.warnings.append(Anomaly(code, message, provenance))

    def warning_codes(self) -> list[str]:
        return [w.code for w in self.warnings]

    def record_provenances(self) -> list[Provenance]:
        out = [r.provenance for group in (self.ecgs, self.bps, self.weights, self.orders) for r in group]
        out += [a.provenance for a in self.app_timestamps]
        out += [f.provenance for f in self.profile_fragments]
        return out

    def item_for(self, path: str) -> EvidenceItem | None:
        for item in self.items:
            if item.dump_relative_path == path:
                return item
        return None
