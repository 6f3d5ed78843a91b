"""Chronological merge of extracted records and cross-source consistency checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
from decimal import Decimal
from enum import Enum
from typing import Any

from ._scan import CLOCK_SKEW_TOLERANCE_MS
from .evidence import (
    CaseFile,
    EvidenceItem,
    ForensicTimestamp,
    Platform,
    Provenance,
    format_utc,
    to_local,
)

__all__ = [
    "ConsistencyFinding",
    "EventKind",
    "QuarantinedTimestamp",
    "Severity",
    "Timeline",
    "TimelineEvent",
    "build_timeline",
    "check_consistency",
    "count_timestamp_fields",
]


class EventKind(str, Enum):
    ECG_RECORDED = "EcgRecorded"
    ECG_SYNCED = "EcgSynced"
    ORDER_REQUESTED = "OrderRequested"
    ORDER_COMPLETED = "OrderCompleted"
    BP_RECORDED = "BpRecorded"
    WEIGHT_RECORDED = "WeightRecorded"
    APP_FIRST_USED = "AppFirstUsed"
    PROFILE_OBSERVED = "ProfileObserved"


KIND_ORDER = {k: i for i, k in enumerate(EventKind)}
FIRST_USED_KEYS = {"first_open_time", "firstLaunchDate"}


@dataclass(frozen=True)
class TimelineEvent:
    utc: datetime
    kind: EventKind
    provenance: Provenance
    platform: Platform
    timestamp: ForensicTimestamp = field(compare=False)
    local: str | None = None
    subject: str | None = None
    summary: str = ""
    item: EvidenceItem | None = field(default=None, compare=False)
    payload: Any = field(default=None, compare=False, repr=False)

    @property
    def sort_key(self):
        return (self.utc, KIND_ORDER[self.kind], self.provenance.path, self.provenance.field, self.platform.value)


@dataclass(frozen=True)
class QuarantinedTimestamp:
    """A timestamp field that could not be placed on the timeline."""

    kind: EventKind
    provenance: Provenance
    platform: Platform
    raw: Any
    reason: str


@dataclass
class Timeline:
    events: list[TimelineEvent] = field(default_factory=list)
    quarantined: list[QuarantinedTimestamp] = field(default_factory=list)

    def __iter__(self):
        return iter(self.events)

    def __len__(self):
        return len(self.events)

    def of_kind(self, kind: EventKind) -> list[TimelineEvent]:
        return [e for e in self.events if e.kind is kind]


def _subject(case: CaseFile) -> str | None:
    p = case.profile
    if p is None:
        return None
    name = " ".join(x for x in (p.first_name, p.last_name) if x)
    return name or None


def _sources(case: CaseFile):
    """Yield ``(kind, timestamp, provenance, summary, record)`` for every event-bearing field."""
    for e in case.ecgs:
        yield EventKind.ECG_RECORDED, e.recorded_at, _at(e.provenance, "recorded_at"), f"ECG {e.uuid}", e
        if e.synced_at is not None:
            yield EventKind.ECG_SYNCED, e.synced_at, _at(e.provenance, "synced_at"), f"ECG {e.uuid} synced", e
    by_key = {e.db_key: e.uuid for e in case.ecgs if e.db_key is not None}
    for o in case.orders:
        ref = by_key.get(o.ecg_ref, o.ecg_ref) if isinstance(o.ecg_ref, int) else o.ecg_ref
        yield EventKind.ORDER_REQUESTED, o.requested_at, _at(o.provenance, "requested"), f"review requested for ECG {ref}", o
        if o.completed_at is not None:
            yield (EventKind.ORDER_COMPLETED, o.completed_at, _at(o.provenance, "completed"),
                   f"review completed for ECG {ref}: {o.result or 'no result'}", o)
    for b in case.bps:
        text = f"blood pressure {b.systolic}/{b.diastolic}" + (" (deleted)" if b.deleted else "")
        yield EventKind.BP_RECORDED, b.recorded_at, _at(b.provenance, "timestamp"), text, b
    for w in case.weights:
        yield EventKind.WEIGHT_RECORDED, w.recorded_at, _at(w.provenance, "timestamp"), f"weight {w.weight_kg} kg", w
    for a in case.app_timestamps:
        kind = EventKind.APP_FIRST_USED if a.key in FIRST_USED_KEYS else EventKind.PROFILE_OBSERVED
        yield kind, a.timestamp, a.provenance, a.key, a


def _at(prov: Provenance, name: str) -> Provenance:
    return Provenance(prov.path, f"{prov.field}.{name}" if prov.field else name)


def count_timestamp_fields(case: CaseFile) -> int:
    """Number of event-bearing timestamp fields present (birth dates are attributes, not events)."""
    return sum(1 for _ in _sources(case))


def build_timeline(*cases: CaseFile) -> Timeline:
    """Merge one or more cases into a single UTC-ordered timeline."""
    if len(cases) == 1 and isinstance(cases[0], (list, tuple)):
        cases = tuple(cases[0])
    out = Timeline()
    for case in cases:
        subject = _subject(case)
        for kind, ts, prov, summary, record in _sources(case):
            if ts.utc is None:
                out.quarantined.append(QuarantinedTimestamp(kind, prov, case.platform, ts.raw, ts.error or "unresolved"))
                continue
            local = to_local(ts) if ts.offset_seconds is not None else None
            out.events.append(TimelineEvent(
                utc=ts.utc, kind=kind, provenance=prov, platform=case.platform, timestamp=ts, local=local,
                subject=subject, summary=summary, item=case.item_for(prov.path), payload=record,
            ))
    out.events.sort(key=lambda e: e.sort_key)
    out.quarantined.sort(key=lambda q: (q.provenance.path, q.provenance.field, KIND_ORDER[q.kind]))
    return out


# --------------------------------------------------------------------------
# consistency

class Severity(str, Enum):
    INFO = "Info"
    ANOMALY = "Anomaly"


@dataclass(frozen=True)
class ConsistencyFinding:
    severity: Severity
    code: str
    description: str
    involved: tuple[Provenance, ...]

    def __post_init__(self):
        if not self.involved:
            raise ValueError("a finding must cite at least one provenance reference")


IDENTITY_FIELDS = ("first_name", "last_name", "dob", "gender", "smoker", "height_cm")
LB_TOLERANCE = 0.01
IN_TOLERANCE = 0.1
_LB_KG = Decimal("0.45359237")
_IN_CM = Decimal("2.54")
# extraction warnings that describe how data was read rather than a defect in it
INFORMATIONAL_WARNINGS = {"InfoLayoutFallback"}
LAST_RECORD_KEYS = {
    "last_bp_recording": "bps",
    "last_weight_recording": "weights",
    "last_heart_rate_recording": "ecgs",
}


def _norm(name: str, value):
    if value is None:
        return None
    if name == "dob":
        return value.epoch_ms if isinstance(value, ForensicTimestamp) and value.utc else None
    if name == "height_cm":
        return round(float(value), 6)
    if name in ("gender", "smoker"):
        return int(value)
    return str(value)


def _show(name: str, value) -> str:
    if name == "dob":
        return format_utc(value.utc)
    return repr(getattr(value, "value", value))


def _fallback_prov(case: CaseFile) -> Provenance:
    return Provenance(case.app_root or ".")


def _profile_findings(case: CaseFile) -> list[ConsistencyFinding]:
    observed: dict[str, list[tuple[Any, Any, Provenance]]] = {n: [] for n in IDENTITY_FIELDS}
    for frag in case.profile_fragments:
        for name in IDENTITY_FIELDS:
            value = frag.values.get(name)
            key = _norm(name, value)
            if key is not None:
                observed[name].append((key, value, Provenance(frag.provenance.path, frag.keys.get(name, name))))
    for e in case.ecgs:
        snap = e.patient_snapshot
        for name in IDENTITY_FIELDS:
            value = getattr(snap, name)
            key = _norm(name, value)
            if key is not None:
                observed[name].append((key, value, _at(e.provenance, name)))
    out = []
    for name in IDENTITY_FIELDS:
        first_seen: dict[Any, tuple[Any, Provenance]] = {}
        for key, value, prov in observed[name]:
            first_seen.setdefault(key, (value, prov))
        if len(first_seen) > 1:
            shown = ", ".join(f"{_show(name, v)} at {p}" for v, p in first_seen.values())
            out.append(ConsistencyFinding(
                Severity.ANOMALY, "ProfileMismatch", f"{name} disagrees across sources: {shown}",
                tuple(p for _, p in first_seen.values()),
            ))
    return out


def _near_integer(x: Decimal, tol: float) -> int | None:
    n = int(x.to_integral_value())
    return n if n > 0 and abs(x - n) <= Decimal(str(tol)) else None


def _imperial_findings(case: CaseFile) -> list[ConsistencyFinding]:
    weights: dict[float, list[Provenance]] = {}
    heights: dict[float, list[Provenance]] = {}

    def add(bucket, value, prov):
        if value is not None and value > 0:
            bucket.setdefault(round(float(value), 9), []).append(prov)

    p = case.profile
    if p is not None:
        add(weights, p.weight_kg, p.provenance.get("weight_kg", _fallback_prov(case)))
        add(heights, p.height_cm, p.provenance.get("height_cm", _fallback_prov(case)))
    for e in case.ecgs:
        add(weights, e.patient_snapshot.weight_kg, _at(e.provenance, "weight_kg"))
        add(heights, e.patient_snapshot.height_cm, _at(e.provenance, "height_cm"))
    for w in case.weights:
        add(weights, w.weight_kg, _at(w.provenance, "weight_kg"))
        add(heights, w.height_cm, _at(w.provenance, "height_cm"))

    out = []
    for kg in sorted(weights):
        lb = _near_integer(Decimal(repr(kg)) / _LB_KG, LB_TOLERANCE)
        if lb is not None:
            out.append(ConsistencyFinding(
                Severity.INFO, "ImperialWeightInput", f"{kg} kg is consistent with {lb} lb input",
                tuple(sorted(set(weights[kg]))),
            ))
    for cm in sorted(heights):
        inches = _near_integer(Decimal(repr(cm)) / _IN_CM, IN_TOLERANCE)
        if inches is not None:
            ft, rem = divmod(inches, 12)
            out.append(ConsistencyFinding(
                Severity.INFO, "ImperialHeightInput",
                f"{cm} cm is consistent with {inches} in ({ft} ft {rem} in) input",
                tuple(sorted(set(heights[cm]))),
            ))
    return out


def _encoding_findings(case: CaseFile) -> list[ConsistencyFinding]:
    seen: dict[str, Provenance] = {}
    for _, ts, prov, _, _ in _sources(case):
        seen.setdefault(ts.encoding.value, prov)
    if len(seen) < 2:
        return []
    names = sorted(seen)
    return [ConsistencyFinding(
        Severity.INFO, "MixedTimestampEncodings", "case mixes timestamp encodings: " + ", ".join(names),
        tuple(seen[n] for n in names),
    )]


def _order_findings(case: CaseFile) -> list[ConsistencyFinding]:
    out = []
    for o in case.orders:
        if o.inverted_times:
            out.append(ConsistencyFinding(
                Severity.ANOMALY, "OrderCompletedBeforeRequested",
                f"order for ECG {o.ecg_ref} completed at {format_utc(o.completed_at.utc)} "
                f"before it was requested at {format_utc(o.requested_at.utc)}",
                (_at(o.provenance, "requested"), _at(o.provenance, "completed")),
            ))
    return out


def _last_record_findings(case: CaseFile) -> list[ConsistencyFinding]:
    out = []
    for a in case.app_timestamps:
        attr = LAST_RECORD_KEYS.get(a.key)
        if attr is None or a.timestamp.utc is None:
            continue
        times = [r.recorded_at for r in getattr(case, attr) if r.recorded_at.utc is not None]
        if not times:
            # nothing to compare against; a dropped table is reported by the extractor
            continue
        latest = max(times, key=lambda t: t.epoch_ms)
        if abs(latest.epoch_ms - a.timestamp.epoch_ms) > CLOCK_SKEW_TOLERANCE_MS:
            out.append(ConsistencyFinding(
                Severity.ANOMALY, "LastRecordMismatch",
                f"{a.key} is {format_utc(a.timestamp.utc)} but the latest record is {format_utc(latest.utc)}",
                (a.provenance, Provenance(latest.source_field.split("#")[0], latest.source_field.partition("#")[2])),
            ))
    return out


def _warning_findings(case: CaseFile) -> list[ConsistencyFinding]:
    out = []
    for w in case.warnings:
        sev = Severity.INFO if w.code in INFORMATIONAL_WARNINGS else Severity.ANOMALY
        out.append(ConsistencyFinding(sev, w.code, w.message, (w.provenance or _fallback_prov(case),)))
    return out


def check_consistency(case: CaseFile) -> list[ConsistencyFinding]:
    """Cross-check one case. Extraction warnings are carried over as findings."""
    findings = (
        _profile_findings(case)
        + _imperial_findings(case)
        + _encoding_findings(case)
        + _order_findings(case)
        + _last_record_findings(case)
        + _warning_findings(case)
    )
    return findings
