"""Extraction of Kardia artifacts from an iOS logical dump.

Expected layout of the ``com.alivecor.professional.aliveecg`` container::

    Documents/AliveECGDB.sqlite     ZECG, ZKDMBLOODPRESSURERECORDING, ZKDMWEIGHT, ZOVERREADERORDER
    Documents/ecgfiles/*.atc
    Documents/<ZUUID>.m4a
    Library/Preferences/com.alivecor.professional.aliveecg.plist

Timestamps are Mac absolute time (seconds since 2001-01-01 GMT).
"""

from __future__ import annotations

import logging
import plistlib
import sqlite3
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from decimal import Decimal
from pathlib import Path

from . import _scan
from .errors import AppNotFound, MalformedPlist, NotADatabase
from .evidence import (
    MAC_EPOCH,
    UTC,
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
    WeightRecord,
)

log = logging.getLogger(__name__)

APP_ID = "com.alivecor.professional.aliveecg"
CONTAINERS_DIR = "private/var/mobile/containers/data/application"
CONTAINER_MARKER = ".com.apple.mobile_container_manager.metadata.plist"
DOCUMENTED_TABLES = ("ZECG", "ZKDMBLOODPRESSURERECORDING", "ZKDMWEIGHT", "ZOVERREADERORDER")
PLAUSIBLE_WINDOW = (datetime(2001, 1, 1, tzinfo=UTC), datetime(2100, 1, 1, tzinfo=UTC))


@dataclass(frozen=True)
class IosAppLayout:
    dump_root: Path
    app_root: str
    documents_dir: str = "Documents"
    ecgfiles_dir: str = "Documents/ecgfiles"
    db_path: str = "Documents/AliveECGDB.sqlite"
    prefs_plist: str = f"Library/Preferences/{APP_ID}.plist"

    def path(self, rel: str = "") -> Path:
        return self.dump_root / self.app_root / rel if rel else self.dump_root / self.app_root

    def rel(self, sub: str) -> str:
        return f"{self.app_root}/{sub}"

    def missing_dirs(self) -> list[str]:
        dirs = (self.documents_dir, self.ecgfiles_dir, self.prefs_plist.rsplit("/", 1)[0])
        return [d for d in dirs if not self.path(d).is_dir()]


def _marker_bundle(path: Path) -> str | None:
    try:
        with open(path, "rb") as fh:
            meta = plistlib.load(fh)
    except Exception:  # any unreadable marker just fails to match
        return None
    return meta.get("MCMMetadataIdentifier") if isinstance(meta, dict) else None


def locate_app_root(dump_root) -> IosAppLayout:
    """Find the app container by folder name, else by container metadata marker."""
    dump_root = Path(dump_root)
    canonical = dump_root / CONTAINERS_DIR / APP_ID
    if canonical.is_dir():
        return IosAppLayout(dump_root, canonical.relative_to(dump_root).as_posix())
    hits = _scan.find_named_dirs(dump_root, APP_ID)
    if hits:
        return IosAppLayout(dump_root, hits[0].relative_to(dump_root).as_posix())
    markers = []
    for path in _scan.walk_files(dump_root):
        if path.name == CONTAINER_MARKER and _marker_bundle(path) == APP_ID:
            markers.append(path.parent)
    if markers:
        best = min(markers, key=lambda p: (len(p.relative_to(dump_root).parts), p.relative_to(dump_root).as_posix()))
        return IosAppLayout(dump_root, best.relative_to(dump_root).as_posix())
    raise AppNotFound(f"no {APP_ID} container under {dump_root}")


# --------------------------------------------------------------------------
# AliveECGDB.sqlite

@dataclass
class AliveDbContents:
    ecgs: list[EcgRecording] = field(default_factory=list)
    bps: list[BloodPressureRecord] = field(default_factory=list)
    weights: list[WeightRecord] = field(default_factory=list)
    orders: list[ReferralOrder] = field(default_factory=list)
    table_census: dict[str, int] = field(default_factory=dict)
    opaque_tables: list[str] = field(default_factory=list)
    warnings: list[Anomaly] = field(default_factory=list)

    def warn(self, code, message, provenance=None):
        self.warnings.append(Anomaly(code, message, provenance))


def _in_window(ts: ForensicTimestamp) -> bool:
    return ts.utc is not None and PLAUSIBLE_WINDOW[0] <= ts.utc < PLAUSIBLE_WINDOW[1]


def mac_time(raw, source: str, sink, event: bool = True) -> ForensicTimestamp:
    """Decode a Mac absolute value.

    Event times outside 2001-2100 are re-tried as Unix seconds, then Unix
    milliseconds. Attribute dates such as a birth date legitimately precede
    2001 and are never re-interpreted.
    """
    ts = ForensicTimestamp.lenient(raw, Encoding.MAC_ABSOLUTE_SECONDS, None, source)
    prov = Provenance(source.split("#")[0], source)
    if ts.resolved and (not event or _in_window(ts)):
        return ts
    # an epoch-ms value overflows when read as seconds, so retry unresolved values too
    if event:
        for enc in (Encoding.EPOCH_SECONDS_GMT, Encoding.EPOCH_MILLIS_GMT):
            alt = ForensicTimestamp.lenient(raw, enc, None, source)
            if _in_window(alt):
                log.info("%s: value %r decoded as %s", source, raw, enc.value)
                return alt
    if not ts.resolved:
        sink.warn("UnparseableTimestamp", ts.error, prov)
    else:
        sink.warn("ImplausibleTimestamp", f"{raw!r} decodes outside 2001-2100 under every encoding", prov)
    return ts


def _get(row, col):
    return row[col] if col is not None else None


def _text(value):
    return None if value is None else str(value)


def parse_alive_db(db_file, rel_path: str | None = None) -> AliveDbContents:
    db_file = Path(db_file)
    rel = rel_path or db_file.name
    out = AliveDbContents()
    con = _scan.open_readonly(db_file)
    try:
        census = _scan.table_census(con)
        out.table_census = census
        documented = {t.lower() for t in DOCUMENTED_TABLES}
        out.opaque_tables = [t for t in census if t.lower() not in documented]

        def ts(raw, field_path, event=True):
            return mac_time(raw, f"{rel}#{field_path}", out, event)

        t = _scan.Table(con, "ZECG", census, out, rel)
        c_pk = t.col("Z_PK")
        c_rec, c_hr, c_comment = t.col("ZDATERECORDED"), t.col("ZHEARTRATE"), t.col("ZCOMMENT")
        c_file, c_sync, c_dur = t.col("ZFILENAME"), t.col("ZDATESYNCED"), t.col("ZDURATION_MS")
        c_angina, c_audio = t.col("ZMC_ANGINA"), t.col("ZHAS_AUDIO_DESCRIPTION")
        c_inv, c_rest = t.col("ZINVERTED"), t.col("Z_IS_RESTING_HEART_RATE")
        # the column is written both ZUUID and ZUID
        c_uuid = t.col("ZUUID", "ZUID")
        c_male, c_first, c_last = t.col("ZMALE"), t.col("ZPATIENTFIRSTNAME"), t.col("ZPATIENTLASTNAME")
        c_dob, c_height = t.col("ZPATIENTDOB"), t.col("ZHEIGHT")
        mc_cols = sorted(c for c in t.cols if c.upper().startswith("ZMC_"))
        for i, row in enumerate(t.rows):
            prov = t.prov(i)
            flags = {c[4:].lower(): _scan.flag(out, row[c], Provenance(rel, f"{t.label}[{i}].{c}")) for c in mc_cols}
            flags = {k: v for k, v in flags.items() if v is not None}
            dob_raw = _get(row, c_dob)
            sync_raw = _get(row, c_sync)
            duration = _scan.to_int(_get(row, c_dur))
            hr = _scan.to_int(_get(row, c_hr))
            for name, v in (("duration", duration), ("heart_rate", hr)):
                if isinstance(v, int) and v < 0:
                    out.warn("ImplausibleVitals", f"{name}={v} is negative", prov)
            out.ecgs.append(EcgRecording(
                uuid=str(_get(row, c_uuid) or ""),
                recorded_at=ts(_get(row, c_rec), f"{t.label}.ZDATERECORDED"),
                duration_ms=duration,
                heart_rate_bpm=hr,
                inverted=_scan.code(out, Orientation, _get(row, c_inv), prov),
                has_audio=_scan.flag(out, _get(row, c_audio), prov),
                atc_filename=_text(_get(row, c_file)) or "",
                provenance=prov,
                comment=_text(_get(row, c_comment)),
                synced_at=ts(sync_raw, f"{t.label}.ZDATESYNCED") if sync_raw is not None else None,
                is_resting=_scan.flag(out, _get(row, c_rest), prov),
                mc_angina=flags.get("angina"),
                condition_flags=flags,
                patient_snapshot=PatientSnapshot(
                    first_name=_text(_get(row, c_first)),
                    last_name=_text(_get(row, c_last)),
                    dob=ts(dob_raw, f"{t.label}.ZPATIENTDOB", event=False) if dob_raw is not None else None,
                    height_cm=_scan.check_vital(out, "height", _scan.to_float(_get(row, c_height)), _scan.HEIGHT_RANGE_CM, prov),
                    gender=_scan.code(out, Gender, _get(row, c_male), prov),
                ),
                db_key=_scan.to_int(_get(row, c_pk)),
            ))

        t = _scan.Table(con, "ZKDMBLOODPRESSURERECORDING", census, out, rel)
        c_date, c_sys, c_dia = t.col("ZDATE", "ZTIMESTAMP"), t.col("ZSYSTOLIC"), t.col("ZDIASTOLIC")
        c_hr, c_notes = t.col("ZHEARTRATE"), t.col("ZNOTES", "ZNOTE")
        c_src, c_del = t.col("ZSOURCE", required=False), t.col("ZDELETED", required=False)
        for i, row in enumerate(t.rows):
            prov = t.prov(i)
            rec = BloodPressureRecord(
                recorded_at=ts(_get(row, c_date), f"{t.label}.{c_date or 'ZDATE'}"),
                deleted=bool(_scan.flag(out, _get(row, c_del), prov)),
                systolic=_scan.to_int(_get(row, c_sys)),
                diastolic=_scan.to_int(_get(row, c_dia)),
                heart_rate_bpm=_scan.to_int(_get(row, c_hr)),
                source=_text(_get(row, c_src)) or "",
                notes=_text(_get(row, c_notes)),
                provenance=prov,
            )
            if rec.degenerate:
                out.warn("ImplausibleBloodPressure", f"systolic={rec.systolic} diastolic={rec.diastolic}", prov)
            out.bps.append(rec)

        t = _scan.Table(con, "ZKDMWEIGHT", census, out, rel)
        c_date, c_w, c_h, c_src = t.col("ZDATE", "ZTIMESTAMP"), t.col("ZWEIGHT"), t.col("ZHEIGHT"), t.col("ZSOURCE")
        for i, row in enumerate(t.rows):
            prov = t.prov(i)
            out.weights.append(WeightRecord(
                recorded_at=ts(_get(row, c_date), f"{t.label}.{c_date or 'ZDATE'}"),
                weight_kg=_scan.check_vital(out, "weight", _scan.to_float(_get(row, c_w)), _scan.WEIGHT_RANGE_KG, prov),
                height_cm=_scan.check_vital(out, "height", _scan.to_float(_get(row, c_h)), _scan.HEIGHT_RANGE_CM, prov),
                source=_text(_get(row, c_src)) or "",
                provenance=prov,
            ))

        t = _scan.Table(con, "ZOVERREADERORDER", census, out, rel)
        c_ecg, c_req = t.col("ZECG"), t.col("ZDATEREQUESTED")
        c_done, c_res = t.col("ZDATECOMPLETED"), t.col("ZRESULT")
        keys = {e.db_key for e in out.ecgs if e.db_key is not None}
        for i, row in enumerate(t.rows):
            prov = t.prov(i)
            ref = _scan.to_int(_get(row, c_ecg))
            done = _get(row, c_done)
            out.orders.append(ReferralOrder(
                ecg_ref=ref,
                result=_text(_get(row, c_res)),
                requested_at=ts(_get(row, c_req), f"{t.label}.ZDATEREQUESTED"),
                completed_at=ts(done, f"{t.label}.ZDATECOMPLETED") if done is not None else None,
                provenance=prov,
            ))
            # exact integer join only
            if not isinstance(ref, int) or ref not in keys:
                out.warn("DanglingOrder", f"order references unknown Z_PK {ref!r}", prov)
    except sqlite3.DatabaseError as exc:
        raise NotADatabase(f"{db_file}: {exc}") from exc
    finally:
        con.close()
    return out


# --------------------------------------------------------------------------
# preferences plist

PLIST_KEYS = {
    "firstName": "first_name",
    "lastName": "last_name",
    "gender": "gender",
    "dob": "dob",
    "heightCm": "height_cm",
    "email": "email",
    "medicalConditions": "medical_conditions",
}
APP_VERSION_KEY = "appVersion"
APP_TIMESTAMP_KEYS = ("firstLaunchDate", "lastLaunchDate")


@dataclass
class PlistContents:
    fragment: ProfileFragment | None = None
    app_metadata: dict = field(default_factory=dict)
    app_timestamps: list[AppTimestamp] = field(default_factory=list)
    opaque_keys: list[Provenance] = field(default_factory=list)
    raw: bytes | None = None
    warnings: list[Anomaly] = field(default_factory=list)

    def warn(self, code, message, provenance=None):
        self.warnings.append(Anomaly(code, message, provenance))


def _date_to_mac(value: datetime) -> Decimal:
    # plistlib yields naive datetimes in UTC
    delta = value.replace(tzinfo=UTC) - MAC_EPOCH
    return Decimal(delta // timedelta(microseconds=1)) / Decimal(10**6)


def _plist_time(value, source, sink, event=True) -> ForensicTimestamp:
    if isinstance(value, datetime):
        raw = _date_to_mac(value)
        raw = int(raw) if raw == raw.to_integral_value() else float(raw)
        return mac_time(raw, source, sink, event)
    return mac_time(value, source, sink, event)


def parse_prefs_plist(plist_file, rel_path: str | None = None) -> PlistContents:
    """Read the app preferences plist (XML or ``bplist00`` binary).

    Raises :class:`MalformedPlist` if the document cannot be decoded.
    """
    path = Path(plist_file)
    rel = rel_path or path.name
    out = PlistContents()
    data = path.read_bytes()
    if data.startswith(b"bplist") and not data.startswith(b"bplist00"):
        out.raw = data
        out.warn("UnsupportedPlistVersion", f"binary plist version {data[6:8]!r}", Provenance(rel))
        return out
    try:
        doc = plistlib.loads(data)
    except Exception as exc:  # plistlib raises several unrelated types on bad input
        raise MalformedPlist(f"{rel}: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedPlist(f"{rel}: top-level object is {type(doc).__name__}, expected dictionary")

    values, keys = {}, {}
    for key in sorted(doc):
        value = doc[key]
        prov = Provenance(rel, key)
        attr = PLIST_KEYS.get(key)
        if attr == "dob":
            value = _plist_time(value, f"{rel}#{key}", out, event=False)
        elif attr == "gender":
            value = _scan.code(out, Gender, value, prov)
        elif attr == "height_cm":
            value = _scan.check_vital(out, "height", _scan.to_float(value), _scan.HEIGHT_RANGE_CM, prov)
        elif attr == "medical_conditions":
            value = tuple(str(v) for v in value) if isinstance(value, (list, tuple)) else (str(value),)
        elif key == APP_VERSION_KEY:
            out.app_metadata["app_version"] = str(value)
            continue
        elif key in APP_TIMESTAMP_KEYS:
            out.app_timestamps.append(AppTimestamp(key, _plist_time(value, f"{rel}#{key}", out), prov))
            continue
        elif attr is None:
            out.opaque_keys.append(prov)
            continue
        values[attr] = value
        keys[attr] = key
    out.fragment = ProfileFragment(Provenance(rel), values, keys)
    return out


def _db_fragment(ecgs: list[EcgRecording]) -> ProfileFragment | None:
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
    }
    cols = {"first_name": "ZPATIENTFIRSTNAME", "last_name": "ZPATIENTLASTNAME", "dob": "ZPATIENTDOB",
            "height_cm": "ZHEIGHT", "gender": "ZMALE"}
    return ProfileFragment(latest.provenance, values, {k: f"{latest.provenance.field}.{v}" for k, v in cols.items()})


# --------------------------------------------------------------------------
# orchestration

def scan_media(case: CaseFile, layout: IosAppLayout) -> None:
    _scan.link_atc(case, layout.dump_root, by_filename=True)
    _scan.link_audio(case)


def extract(dump_root) -> CaseFile:
    layout = locate_app_root(dump_root)
    case = CaseFile(Platform.IOS, layout.app_root)
    for d in layout.missing_dirs():
        case.warn("MissingDirectory", f"{d} not present", Provenance(layout.rel(d)))
    _scan.catalog(case, layout.dump_root, layout.path(), Platform.IOS)

    db = layout.path(layout.db_path)
    if db.is_file():
        try:
            contents = parse_alive_db(db, layout.rel(layout.db_path))
        except NotADatabase as exc:
            case.warn("NotADatabase", str(exc), Provenance(layout.rel(layout.db_path)))
        else:
            case.ecgs, case.bps, case.weights, case.orders = contents.ecgs, contents.bps, contents.weights, contents.orders
            case.table_census = contents.table_census
            case.opaque_tables = contents.opaque_tables
            case.warnings.extend(contents.warnings)
    else:
        case.warn("MissingDatabase", "AliveECGDB.sqlite not present", Provenance(layout.rel(layout.db_path)))

    plist = layout.path(layout.prefs_plist)
    if plist.is_file():
        try:
            p = parse_prefs_plist(plist, layout.rel(layout.prefs_plist))
        except MalformedPlist as exc:
            case.warn("MalformedPlist", str(exc), Provenance(layout.rel(layout.prefs_plist)))
        else:
            if p.fragment is not None:
                case.profile_fragments.append(p.fragment)
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
