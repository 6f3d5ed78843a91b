"""Extraction of Kardia artifacts from an Android filesystem dump.

Expected layout below ``/data/data/com.alivecor.aliveecg``::

    databases/ECG.db        ECG, bp_records, Weight_records, Orders (+ 9 other tables)
    files/ecgs/*.atc        two container files per reading
    files/*.m4a|*.aac       audio notes named after the recording UUID
    files/temp/*.pdf        referral documents
    shared_prefs/*.xml      profile and usage metadata
"""

from __future__ import annotations

import logging
import sqlite3
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

from . import _scan
from .errors import AppNotFound, NotADatabase
from .evidence import (
    Anomaly,
    AppTimestamp,
    BloodPressureRecord,
    CaseFile,
    EcgRecording,
    Encoding,
    ForensicTimestamp,
    Gender,
    Orientation,
    PatientProfile,
    PatientSnapshot,
    Platform,
    ProfileFragment,
    Provenance,
    ReferralOrder,
    Smoker,
    WeightRecord,
)

log = logging.getLogger(__name__)

APP_ID = "com.alivecor.aliveecg"
CANONICAL_ROOT = f"data/data/{APP_ID}"
DOCUMENTED_TABLES = ("ECG", "bp_records", "Weight_records", "Orders")
MILLIS_THRESHOLD = 10**12

PREFS_FILE = f"{APP_ID}_preferences.xml"
MEASUREMENT_PREFS_FILE = "com.google.android.gms.measurement_prefs.xml"
USERPROFILE_FILE = "userprofile.xml"


@dataclass(frozen=True)
class AndroidAppLayout:
    dump_root: Path
    app_root: str
    db_path: str = "databases/ECG.db"
    ecg_dir: str = "files/ecgs"
    audio_dir: str = "files"
    temp_dir: str = "files/temp"
    prefs_dir: str = "shared_prefs"

    def path(self, rel: str = "") -> Path:
        return self.dump_root / self.app_root / rel if rel else self.dump_root / self.app_root

    def rel(self, sub: str) -> str:
        return f"{self.app_root}/{sub}"

    def missing_dirs(self) -> list[str]:
        dirs = (self.db_path.rsplit("/", 1)[0], self.ecg_dir, self.audio_dir, self.temp_dir, self.prefs_dir)
        return [d for d in dirs if not self.path(d).is_dir()]


def locate_app_root(dump_root) -> AndroidAppLayout:
    dump_root = Path(dump_root)
    if (dump_root / CANONICAL_ROOT).is_dir():
        return AndroidAppLayout(dump_root, CANONICAL_ROOT)
    hits = _scan.find_named_dirs(dump_root, APP_ID)
    if not hits:
        raise AppNotFound(f"no {APP_ID} directory under {dump_root}")
    return AndroidAppLayout(dump_root, hits[0].relative_to(dump_root).as_posix())


# --------------------------------------------------------------------------
# ECG.db

@dataclass
class EcgDbContents:
    ecgs: list[EcgRecording] = field(default_factory=list)
    bps: list[BloodPressureRecord] = field(default_factory=list)
    weights: list[WeightRecord] = field(default_factory=list)
    orders: list[ReferralOrder] = field(default_factory=list)
    table_census: dict[str, int] = field(default_factory=dict)
    opaque_tables: list[str] = field(default_factory=list)
    epoch_unit: Encoding | None = None
    warnings: list[Anomaly] = field(default_factory=list)

    def warn(self, code, message, provenance=None):
        self.warnings.append(Anomaly(code, message, provenance))


# "data Recorded" is printed with a space in the field table; accept the usual spellings
RECORDED_COLUMNS = ("data Recorded", "dataRecorded", "data_recorded")
EVENT_TIME_COLUMNS = {
    "ECG": RECORDED_COLUMNS,
    "bp_records": ("timestamp",),
    "Weight_records": ("timestamp",),
    "Orders": ("requested", "received"),
}


def _infer_epoch_unit(con, census) -> Encoding | None:
    """Decide seconds vs milliseconds once per database.

    Event timestamps (recordings, BP, weight, orders) all postdate 2001, so a
    magnitude of 10**12 or more means milliseconds. Applying the verdict to the
    whole file keeps pre-1973 birth dates in milliseconds from being misread.
    """
    values = []
    for table, cands in EVENT_TIME_COLUMNS.items():
        actual = _scan.find_table(census, table)
        if actual is None:
            continue
        cols = _scan.columns(con, actual)
        for cand in cands:
            col = _scan.pick_column(cols, cand)
            if col is None:
                continue
            for row in _scan.select_all(con, actual):
                v = row[col]
                if isinstance(v, (int, float)) and not isinstance(v, bool) and v:
                    values.append(abs(v))
    if not values:
        return None
    return Encoding.EPOCH_MILLIS_GMT if max(values) >= MILLIS_THRESHOLD else Encoding.EPOCH_SECONDS_GMT


def _epoch(raw, unit: Encoding | None, offset, source: str, sink) -> ForensicTimestamp:
    enc = unit
    if enc is None:
        is_num = isinstance(raw, (int, float)) and not isinstance(raw, bool)
        enc = Encoding.EPOCH_MILLIS_GMT if is_num and abs(raw) >= MILLIS_THRESHOLD else Encoding.EPOCH_SECONDS_GMT
        log.info("%s: per-value epoch unit %s", source, enc.value)
    ts = ForensicTimestamp.lenient(raw, enc, _scan.to_int(offset), source)
    if not ts.resolved:
        sink.warn("UnparseableTimestamp", ts.error, Provenance(source.split("#")[0], source))
    return ts


def _get(row, col):
    return row[col] if col is not None else None


def parse_ecg_db(db_file, rel_path: str | None = None) -> EcgDbContents:
    """Read ECG.db strictly read-only.

    ``rel_path`` is the dump-relative path used in provenance records.
    """
    db_file = Path(db_file)
    rel = rel_path or db_file.name
    out = EcgDbContents()
    con = _scan.open_readonly(db_file)
    try:
        census = _scan.table_census(con)
        out.table_census = census
        documented = {t.lower() for t in DOCUMENTED_TABLES}
        out.opaque_tables = [t for t in census if t.lower() not in documented]
        unit = _infer_epoch_unit(con, census)
        out.epoch_unit = unit
        if unit is not None:
            log.info("%s: epoch unit %s inferred from event timestamps", rel, unit.value)

        def ts(raw, offset, field_path):
            return _epoch(raw, unit, offset, f"{rel}#{field_path}", out)

        t = _scan.Table(con, "ECG", census, out, rel)
        c_uuid = t.col("uuid")
        c_server = t.col("server_id")
        c_rec = t.col(*RECORDED_COLUMNS)
        if c_rec is not None:
            log.info("%s: recording time column resolved to %r", rel, c_rec)
        c_off = t.col("recorded_offset", "timestamp_offset", required=False)
        c_dur = t.col("duration")
        c_hr = t.col("heart_rate")
        c_inv = t.col("inverted")
        c_h = t.col("height")
        c_w = t.col("weight")
        c_g = t.col("gender")
        c_s = t.col("smoker")
        c_audio = t.col("has_audio_file")
        c_first = t.col("first_name")
        c_last = t.col("last_name")
        c_dob = t.col("dob", "date_of_birth")
        for i, row in enumerate(t.rows):
            prov = t.prov(i)
            uuid = str(_get(row, c_uuid) or "")
            dob_raw = _get(row, c_dob)
            snapshot = PatientSnapshot(
                first_name=_get(row, c_first),
                last_name=_get(row, c_last),
                dob=ts(dob_raw, None, f"{t.label}.{c_dob}") if dob_raw is not None else None,
                height_cm=_scan.check_vital(out, "height", _scan.to_float(_get(row, c_h)), _scan.HEIGHT_RANGE_CM, prov),
                weight_kg=_scan.check_vital(out, "weight", _scan.to_float(_get(row, c_w)), _scan.WEIGHT_RANGE_KG, prov),
                gender=_scan.code(out, Gender, _get(row, c_g), prov),
                smoker=_scan.code(out, Smoker, _get(row, c_s), prov),
            )
            duration = _scan.to_int(_get(row, c_dur))
            hr = _scan.to_int(_get(row, c_hr))
            for name, v in (("duration", duration), ("heart_rate", hr)):
                if isinstance(v, int) and v < 0:
                    out.warn("ImplausibleVitals", f"{name}={v} is negative", prov)
            server = _get(row, c_server)
            out.ecgs.append(EcgRecording(
                uuid=uuid,
                server_id=None if server is None else str(server),
                recorded_at=ts(_get(row, c_rec), _get(row, c_off), f"{t.label}.{c_rec or RECORDED_COLUMNS[0]}"),
                duration_ms=duration,
                heart_rate_bpm=hr,
                inverted=_scan.code(out, Orientation, _get(row, c_inv), prov),
                has_audio=_scan.flag(out, _get(row, c_audio), prov),
                atc_filename=f"{uuid}.atc" if uuid else "",
                provenance=prov,
                patient_snapshot=snapshot,
            ))

        t = _scan.Table(con, "bp_records", census, out, rel)
        c_t, c_off = t.col("timestamp"), t.col("timestamp_offset")
        c_del, c_sys, c_dia = t.col("deleted"), t.col("systolic"), t.col("diastolic")
        c_hr, c_src = t.col("heart_rate"), t.col("source")
        for i, row in enumerate(t.rows):
            prov = t.prov(i)
            rec = BloodPressureRecord(
                recorded_at=ts(_get(row, c_t), _get(row, c_off), f"{t.label}.timestamp"),
                deleted=bool(_scan.flag(out, _get(row, c_del), prov)),
                systolic=_scan.to_int(_get(row, c_sys)),
                diastolic=_scan.to_int(_get(row, c_dia)),
                heart_rate_bpm=_scan.to_int(_get(row, c_hr)),
                source="" if _get(row, c_src) is None else str(_get(row, c_src)),
                provenance=prov,
            )
            if rec.degenerate:
                out.warn("ImplausibleBloodPressure", f"systolic={rec.systolic} diastolic={rec.diastolic}", prov)
            out.bps.append(rec)

        t = _scan.Table(con, "Weight_records", census, out, rel)
        c_t, c_off = t.col("timestamp"), t.col("timestamp_offset")
        c_w, c_h, c_src = t.col("weight"), t.col("height"), t.col("source")
        for i, row in enumerate(t.rows):
            prov = t.prov(i)
            out.weights.append(WeightRecord(
                recorded_at=ts(_get(row, c_t), _get(row, c_off), f"{t.label}.timestamp"),
                weight_kg=_scan.check_vital(out, "weight", _scan.to_float(_get(row, c_w)), _scan.WEIGHT_RANGE_KG, prov),
                height_cm=_scan.check_vital(out, "height", _scan.to_float(_get(row, c_h)), _scan.HEIGHT_RANGE_CM, prov),
                source="" if _get(row, c_src) is None else str(_get(row, c_src)),
                provenance=prov,
            ))

        t = _scan.Table(con, "Orders", census, out, rel)
        c_ecg, c_res = t.col("ecg_id"), t.col("result")
        c_req, c_rcv = t.col("requested"), t.col("received")
        known = {e.uuid.lower() for e in out.ecgs}
        for i, row in enumerate(t.rows):
            prov = t.prov(i)
            ref = _get(row, c_ecg)
            ref = "" if ref is None else str(ref)
            rcv = _get(row, c_rcv)
            out.orders.append(ReferralOrder(
                ecg_ref=ref,
                result=_get(row, c_res),
                requested_at=ts(_get(row, c_req), None, f"{t.label}.requested"),
                completed_at=ts(rcv, None, f"{t.label}.received") if rcv is not None else None,
                provenance=prov,
            ))
            if ref.lower() not in known:
                out.warn("DanglingOrder", f"order references unknown ECG {ref!r}", prov)
    except sqlite3.DatabaseError as exc:
        raise NotADatabase(f"{db_file}: {exc}") from exc
    finally:
        con.close()
    return out


# --------------------------------------------------------------------------
# shared_prefs

def read_prefs_xml(path: Path) -> dict[str, tuple[str, object]]:
    """Parse an Android SharedPreferences file into ``{name: (type, value)}``."""
    root = ET.parse(path).getroot()
    if root.tag != "map":
        raise ET.ParseError(f"root element is <{root.tag}>, expected <map>")
    out = {}
    for el in root:
        name = el.get("name")
        if name is None:
            continue
        kind = el.tag
        if kind == "string":
            value = el.text or ""
        elif kind == "set":
            value = [c.text or "" for c in el]
        elif kind == "boolean":
            value = el.get("value") == "true"
        elif kind in ("int", "long"):
            value = int(el.get("value"))
        elif kind in ("float", "double"):
            value = float(el.get("value"))
        else:
            value = el.get("value", el.text)
        out[name] = (kind, value)
    return out


USERPROFILE_KEYS = {
    "first_name": "first_name",
    "last_name": "last_name",
    "dob": "dob",
    "weight": "weight_kg",
    "email": "email",
    "country": "country",
    "smoker": "smoker",
}
PREFS_TIMESTAMP_KEYS = ("last_bp_recording", "last_weight_recording", "last_heart_rate_recording")
FIRST_USED_KEY = "first_open_time"


@dataclass
class PrefsContents:
    fragments: list[ProfileFragment] = field(default_factory=list)
    app_timestamps: list[AppTimestamp] = field(default_factory=list)
    app_metadata: dict = field(default_factory=dict)
    opaque_keys: list[Provenance] = field(default_factory=list)
    warnings: list[Anomaly] = field(default_factory=list)

    def warn(self, code, message, provenance=None):
        self.warnings.append(Anomaly(code, message, provenance))


def _millis(raw, source, sink) -> ForensicTimestamp:
    # SharedPreferences longs hold Java millisecond clocks
    ts = ForensicTimestamp.lenient(raw, Encoding.EPOCH_MILLIS_GMT, None, source)
    if not ts.resolved:
        sink.warn("UnparseableTimestamp", ts.error, Provenance(source.split("#")[0], source))
    return ts


def parse_shared_prefs(prefs_dir, dump_root=None) -> PrefsContents:
    prefs_dir = Path(prefs_dir)
    dump_root = Path(dump_root) if dump_root is not None else prefs_dir.parent
    out = PrefsContents()

    def load(name):
        path = prefs_dir / name
        if not path.is_file():
            return None, None
        rel = path.relative_to(dump_root).as_posix()
        try:
            return read_prefs_xml(path), rel
        except (ET.ParseError, ValueError, TypeError) as exc:
            out.warn("MalformedXml", f"{name}: {exc}", Provenance(rel))
            return None, rel

    entries, rel = load(USERPROFILE_FILE)
    if entries is not None:
        values, keys = {}, {}
        for key, (_, value) in entries.items():
            attr = USERPROFILE_KEYS.get(key)
            if attr is None:
                out.opaque_keys.append(Provenance(rel, key))
                continue
            prov = Provenance(rel, key)
            if attr == "dob":
                value = _millis(value, f"{rel}#{key}", out)
            elif attr == "weight_kg":
                value = _scan.check_vital(out, "weight", _scan.to_float(value), _scan.WEIGHT_RANGE_KG, prov)
            elif attr == "smoker":
                value = _scan.code(out, Smoker, value, prov)
            values[attr] = value
            keys[attr] = key
        out.fragments.append(ProfileFragment(Provenance(rel), values, keys))

    entries, rel = load(PREFS_FILE)
    if entries is not None:
        values, keys = {}, {}
        for key, (_, value) in entries.items():
            if key == "email":
                values["email"], keys["email"] = value, key
            elif key in PREFS_TIMESTAMP_KEYS:
                out.app_timestamps.append(AppTimestamp(key, _millis(value, f"{rel}#{key}", out), Provenance(rel, key)))
            else:
                out.opaque_keys.append(Provenance(rel, key))
        if values:
            out.fragments.append(ProfileFragment(Provenance(rel), values, keys))

    entries, rel = load(MEASUREMENT_PREFS_FILE)
    if entries is not None:
        for key, (_, value) in entries.items():
            if key == FIRST_USED_KEY:
                out.app_timestamps.append(AppTimestamp(key, _millis(value, f"{rel}#{key}", out), Provenance(rel, key)))
            else:
                out.opaque_keys.append(Provenance(rel, key))
    return out


def _db_fragment(ecgs: list[EcgRecording]) -> ProfileFragment | None:
    """Profile values carried by the most recent ECG row."""
    dated = [e for e in ecgs if e.recorded_at.utc is not None]
    if not dated:
        return None
    latest = max(dated, key=lambda e: e.recorded_at.utc)
    snap = latest.patient_snapshot
    values = {
        "first_name": snap.first_name,
        "last_name": snap.last_name,
        "dob": snap.dob,
        "height_cm": snap.height_cm,
        "gender": snap.gender,
        "smoker": snap.smoker,
    }
    keys = {"height_cm": "height", "first_name": "first_name", "last_name": "last_name",
            "dob": "dob", "gender": "gender", "smoker": "smoker"}
    return ProfileFragment(latest.provenance, values, {k: f"{latest.provenance.field}.{v}" for k, v in keys.items()})


# --------------------------------------------------------------------------
# orchestration

def scan_media(case: CaseFile, layout: AndroidAppLayout) -> None:
    """Parse and link .atc files and audio notes already cataloged in ``case.items``."""
    _scan.link_atc(case, layout.dump_root, by_filename=False)
    _scan.link_audio(case)


def extract(dump_root) -> CaseFile:
    """Run the full Android extraction. Raises :class:`AppNotFound`."""
    layout = locate_app_root(dump_root)
    case = CaseFile(Platform.ANDROID, layout.app_root)
    for d in layout.missing_dirs():
        case.warn("MissingDirectory", f"{d} not present", Provenance(layout.rel(d)))
    _scan.catalog(case, layout.dump_root, layout.path(), Platform.ANDROID)

    db = layout.path(layout.db_path)
    if db.is_file():
        try:
            contents = parse_ecg_db(db, layout.rel(layout.db_path))
        except NotADatabase as exc:
            case.warn("NotADatabase", str(exc), Provenance(layout.rel(layout.db_path)))
        else:
            case.ecgs, case.bps, case.weights, case.orders = contents.ecgs, contents.bps, contents.weights, contents.orders
            case.table_census = contents.table_census
            case.opaque_tables = contents.opaque_tables
            case.warnings.extend(contents.warnings)
    else:
        case.warn("MissingDatabase", "ECG.db not present", Provenance(layout.rel(layout.db_path)))

    prefs = layout.path(layout.prefs_dir)
    if prefs.is_dir():
        p = parse_shared_prefs(prefs, layout.dump_root)
        case.profile_fragments.extend(p.fragments)
        case.app_timestamps.extend(p.app_timestamps)
        case.app_metadata.update(p.app_metadata)
        case.opaque_keys.extend(p.opaque_keys)
        case.warnings.extend(p.warnings)
    db_frag = _db_fragment(case.ecgs)
    if db_frag is not None:
        case.profile_fragments.append(db_frag)
    case.profile = PatientProfile.merge(case.profile_fragments)

    scan_media(case, layout)
    return case
