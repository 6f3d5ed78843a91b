"""Case reports: canonical JSON, a text summary and a CSV timeline."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from datetime import datetime
from decimal import Decimal
from enum import Enum
from pathlib import Path
from typing import Any

from . import __version__
from .evidence import (
    CaseFile,
    EvidenceItem,
    ForensicTimestamp,
    PatientProfile,
    PatientSnapshot,
    Provenance,
    format_utc,
    to_local,
)
from .timeline import ConsistencyFinding, Timeline, build_timeline, check_consistency

__all__ = [
    "REPORT_VERSION",
    "CaseReport",
    "build_report",
    "load_schema",
    "manifest_lines",
    "parse_manifest",
    "render_csv",
    "render_json",
    "render_text",
]

REPORT_VERSION = 1
SCHEMA_PATH = Path(__file__).with_name("data") / "report.schema.json"
CSV_COLUMNS = ("utc", "local", "kind", "platform", "subject", "summary", "source_path", "source_field", "source_digest")


def load_schema() -> dict:
    return json.loads(SCHEMA_PATH.read_text(encoding="utf-8"))


@dataclass
class CaseReport:
    cases: list[CaseFile]
    timeline: Timeline
    findings: list[tuple[str, ConsistencyFinding]]
    generated_at: datetime
    tool_version: str = __version__
    case_id: str = ""
    evidence: list[EvidenceItem] = field(default_factory=list)

    @property
    def platforms(self) -> list[str]:
        return [c.platform.value for c in self.cases]


def build_report(cases: list[CaseFile], generated_at: datetime) -> CaseReport:
    evidence = sorted({i.dump_relative_path: i for c in cases for i in c.items}.values(),
                      key=lambda i: i.dump_relative_path)
    findings = [(c.platform.value, f) for c in cases for f in check_consistency(c)]
    return CaseReport(
        cases=list(cases),
        timeline=build_timeline(*cases),
        findings=findings,
        generated_at=generated_at,
        case_id=case_id(evidence),
        evidence=evidence,
    )


def case_id(items: list[EvidenceItem]) -> str:
    h = hashlib.sha256()
    for line in manifest_lines(items):
        h.update(line.encode("utf-8") + b"\n")
    return "case-" + h.hexdigest()[:16]


# --------------------------------------------------------------------------
# value formatting

def fmt_decimal(value) -> str:
    """Fixed notation without trailing zeros: 68.0388555, 30, -0.5."""
    if isinstance(value, bool):
        return "1" if value else "0"
    d = value if isinstance(value, Decimal) else Decimal(repr(value) if isinstance(value, float) else str(value))
    text = format(d, "f")
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    return "0" if text in ("-0", "") else text


def _raw(value):
    if value is None or isinstance(value, str):
        return value
    if isinstance(value, (int, float, Decimal)) and not isinstance(value, bool):
        return fmt_decimal(value)
    return str(value)


def _num(value):
    return None if value is None else fmt_decimal(value)


def _enum(value):
    return None if value is None else (value.name if isinstance(value, Enum) else value)


def _prov(p: Provenance | None):
    return None if p is None else {"path": p.path, "field": p.field}


def _ts(ts: ForensicTimestamp | None):
    if ts is None:
        return None
    return {
        "utc": format_utc(ts.utc) if ts.utc else None,
        "local": to_local(ts) if ts.utc and ts.offset_seconds is not None else None,
        "offset_seconds": ts.offset_seconds,
        "raw": _raw(ts.raw),
        "encoding": ts.encoding.value,
        "source": ts.source_field,
    }


def _item(i: EvidenceItem | None):
    if i is None:
        return None
    return {"path": i.dump_relative_path, "size": i.byte_size, "digest": i.digest,
            "category": i.category.value, "platform": i.platform.value}


def _profile(p: PatientProfile | None):
    if p is None:
        return None
    return {
        "first_name": p.first_name,
        "last_name": p.last_name,
        "dob": _ts(p.dob),
        "height_cm": _num(p.height_cm),
        "weight_kg": _num(p.weight_kg),
        "gender": _enum(p.gender),
        "smoker": _enum(p.smoker),
        "email": p.email,
        "country": p.country,
        "medical_conditions": list(p.medical_conditions),
        "sources": {k: _prov(v) for k, v in sorted(p.provenance.items())},
    }


def _snapshot(s: PatientSnapshot):
    return {
        "first_name": s.first_name,
        "last_name": s.last_name,
        "dob": _ts(s.dob),
        "height_cm": _num(s.height_cm),
        "weight_kg": _num(s.weight_kg),
        "gender": _enum(s.gender),
        "smoker": _enum(s.smoker),
    }


def _case(c: CaseFile) -> dict:
    return {
        "platform": c.platform.value,
        "app_root": c.app_root,
        "profile": _profile(c.profile),
        "ecgs": [{
            "uuid": e.uuid,
            "recorded_at": _ts(e.recorded_at),
            "duration_ms": e.duration_ms,
            "heart_rate_bpm": e.heart_rate_bpm,
            "inverted": _enum(e.inverted),
            "has_audio": e.has_audio,
            "atc_filename": e.atc_filename,
            "server_id": e.server_id,
            "comment": e.comment,
            "synced_at": _ts(e.synced_at),
            "is_resting": e.is_resting,
            "mc_angina": e.mc_angina,
            "condition_flags": dict(sorted(e.condition_flags.items())),
            "patient_snapshot": _snapshot(e.patient_snapshot),
            "audio": e.audio_item.dump_relative_path if e.audio_item else None,
            "atc_files": [i.dump_relative_path for i in e.atc_items],
            "source": _prov(e.provenance),
        } for e in c.ecgs],
        "blood_pressure": [{
            "recorded_at": _ts(b.recorded_at),
            "systolic": b.systolic,
            "diastolic": b.diastolic,
            "heart_rate_bpm": b.heart_rate_bpm,
            "deleted": b.deleted,
            "source_app": b.source,
            "notes": b.notes,
            "source": _prov(b.provenance),
        } for b in c.bps],
        "weights": [{
            "recorded_at": _ts(w.recorded_at),
            "weight_kg": _num(w.weight_kg),
            "height_cm": _num(w.height_cm),
            "source_app": w.source,
            "source": _prov(w.provenance),
        } for w in c.weights],
        "orders": [{
            "ecg_ref": str(o.ecg_ref),
            "requested_at": _ts(o.requested_at),
            "completed_at": _ts(o.completed_at),
            "result": o.result,
            "source": _prov(o.provenance),
        } for o in c.orders],
        "app_timestamps": [{"key": a.key, "timestamp": _ts(a.timestamp), "source": _prov(a.provenance)}
                           for a in c.app_timestamps],
        "app_metadata": {k: _raw(v) for k, v in sorted(c.app_metadata.items())},
        "table_census": dict(sorted(c.table_census.items())),
        "opaque_tables": sorted(c.opaque_tables),
        "opaque_keys": [_prov(p) for p in c.opaque_keys],
        "warnings": [{"code": w.code, "message": w.message, "provenance": _prov(w.provenance)} for w in c.warnings],
    }


def report_dict(r: CaseReport) -> dict:
    return {
        "report_version": REPORT_VERSION,
        "tool_version": r.tool_version,
        "case_id": r.case_id,
        "generated_at": format_utc(r.generated_at),
        "platforms": r.platforms,
        "cases": [_case(c) for c in r.cases],
        "timeline": {
            "events": [{
                "utc": format_utc(e.utc),
                "local": e.local,
                "kind": e.kind.value,
                "platform": e.platform.value,
                "subject": e.subject,
                "summary": e.summary,
                "provenance": _prov(e.provenance),
                "digest": e.item.digest if e.item else None,
            } for e in r.timeline.events],
            "quarantined": [{
                "kind": q.kind.value,
                "platform": q.platform.value,
                "raw": _raw(q.raw),
                "reason": q.reason,
                "provenance": _prov(q.provenance),
            } for q in r.timeline.quarantined],
        },
        "findings": [{
            "platform": platform,
            "severity": f.severity.value,
            "code": f.code,
            "description": f.description,
            "involved": [_prov(p) for p in f.involved],
        } for platform, f in r.findings],
        "evidence": [_item(i) for i in r.evidence],
    }


def render_json(r: CaseReport) -> str:
    return json.dumps(report_dict(r), indent=2, ensure_ascii=False) + "\n"


def render_csv(r: CaseReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(CSV_COLUMNS)
    for e in r.timeline.events:
        w.writerow([format_utc(e.utc), e.local or "", e.kind.value, e.platform.value, e.subject or "",
                    e.summary, e.provenance.path, e.provenance.field, e.item.digest if e.item else ""])
    return buf.getvalue()


def render_text(r: CaseReport) -> str:
    lines = [
        f"Case {r.case_id}  (tool {r.tool_version}, generated {format_utc(r.generated_at)})",
        f"Platforms: {', '.join(r.platforms) or 'none'}",
        "",
    ]
    for c in r.cases:
        lines.append(f"[{c.platform.value}] {c.app_root}")
        p = c.profile
        if p is not None:
            name = " ".join(x for x in (p.first_name, p.last_name) if x) or "(unnamed)"
            lines.append(f"  patient: {name}" + (f", born {format_utc(p.dob.utc)[:10]}" if p.dob and p.dob.utc else ""))
        lines.append(f"  ECGs {len(c.ecgs)}, blood pressure {len(c.bps)}, weights {len(c.weights)}, orders {len(c.orders)}")
        lines.append(f"  tables {len(c.table_census)}, evidence files {len(c.items)}, warnings {len(c.warnings)}")
        lines.append("")
    lines.append(f"Timeline ({len(r.timeline.events)} events, {len(r.timeline.quarantined)} quarantined)")
    for e in r.timeline.events:
        local = f"  [{e.local}]" if e.local else ""
        lines.append(f"  {format_utc(e.utc)}{local}  {e.kind.value:<16} {e.summary}")
    for q in r.timeline.quarantined:
        lines.append(f"  QUARANTINED {q.kind.value} {q.provenance}: {q.reason}")
    lines.append("")
    lines.append(f"Findings ({len(r.findings)})")
    for platform, f in r.findings:
        lines.append(f"  {f.severity.value:<7} {f.code}: {f.description}")
        lines.append(f"          at {f.involved[0]}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# manifests

def manifest_lines(items: list[EvidenceItem]) -> list[str]:
    return [f"{i.digest}  {i.byte_size}  {i.dump_relative_path}" for i in sorted(items, key=lambda i: i.dump_relative_path)]


def parse_manifest(text: str) -> list[tuple[str, int, str]]:
    """Read ``digest  size  path`` lines, or the evidence section of a JSON report."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        doc = json.loads(text)
        return [(e["digest"], int(e["size"]), e["path"]) for e in doc["evidence"]]
    out = []
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("  ", 2)
        if len(parts) != 3 or not parts[1].isdigit():
            raise ValueError(f"line {n}: expected 'digest  size  path'")
        out.append((parts[0], int(parts[1]), parts[2]))
    return out
