"""Synthetic Kardia app dumps built from a declarative ground truth.

The generated trees follow the documented Android and iOS layouts closely
enough for the extractors to run against them, and every value written is
known in advance, so ``extract(gen(truth))`` can be compared with ``truth``.
Databases are written with the stdlib ``sqlite3`` module; the extractors read
them back through their own read-only path.
"""

from __future__ import annotations

import hashlib
import plistlib
import random
import sqlite3
import uuid as uuidlib
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from enum import Enum
from pathlib import Path
from xml.sax.saxutils import escape, quoteattr

import yaml

from . import atc
from .errors import OutDirNotEmpty, TruthSpecError, UnwritableTarget
from .evidence import UTC, Encoding, convert_units, encode_utc, sha256_file

__all__ = [
    "AndroidOptions",
    "BpEvent",
    "CaseGroundTruth",
    "EcgEvent",
    "IosOptions",
    "Mutation",
    "ProfileTruth",
    "Referral",
    "WeightEvent",
    "default_truth",
    "gen_android_dump",
    "gen_ios_dump",
    "load_truth",
    "mutate_dump",
    "random_truth",
]

ANDROID_ROOT = "data/data/com.alivecor.aliveecg"
IOS_CONTAINERS = "private/var/mobile/containers/data/application"
IOS_APP = "com.alivecor.professional.aliveecg"
# real result strings are not documented; these are placeholders
ORDER_RESULTS = ("Normal", "Possible AF", "Unreadable")
OPAQUE_TABLE_COUNT = 9


@dataclass
class ProfileTruth:
    first_name: str = "Test"
    last_name: str = "Patient"
    dob: datetime = datetime(1980, 1, 1, tzinfo=UTC)
    height_cm: float = 182.88
    weight_kg: float = 68.0388555
    gender: int = 1
    smoker: int = 0
    email: str = "kardia.test@example.com"
    country: str = "US"
    medical_conditions: list[str] = field(default_factory=list)


@dataclass
class Referral:
    requested_at: datetime
    completed_at: datetime | None = None
    result: str | None = None


@dataclass
class EcgEvent:
    uuid: str
    recorded_at: datetime
    duration_ms: int = 30000
    heart_rate_bpm: int = 70
    inverted: int = 0
    has_audio: bool = False
    referred: Referral | None = None
    server_id: str | None = None
    comment: str | None = None
    synced_at: datetime | None = None
    is_resting: bool = True
    audio_ext: str = "m4a"


@dataclass
class BpEvent:
    recorded_at: datetime
    systolic: int
    diastolic: int
    heart_rate_bpm: int | None = None
    source: str = "manual"
    deleted: bool = False
    notes: str | None = None


@dataclass
class WeightEvent:
    recorded_at: datetime
    weight_kg: float
    height_cm: float
    source: str = "manual"


@dataclass
class AndroidOptions:
    epoch_unit: str = "ms"
    rerooted: bool = False
    recorder: str = "Galaxy S4|Kardia 5.1.2"


@dataclass
class IosOptions:
    plist_encoding: str = "xml"
    fractional_seconds: bool = True
    rerooted: bool = False
    recorder: str = "iPhone SE|iOS 11.3.1|Kardia 5.1.2"


@dataclass
class CaseGroundTruth:
    profile: ProfileTruth = field(default_factory=ProfileTruth)
    ecg_events: list[EcgEvent] = field(default_factory=list)
    bp_events: list[BpEvent] = field(default_factory=list)
    weight_events: list[WeightEvent] = field(default_factory=list)
    zone_offset_seconds: int = -18000
    app_first_used: datetime | None = None
    app_version: str = "5.1.2"
    window: tuple[datetime, datetime] | None = None
    android: AndroidOptions = field(default_factory=AndroidOptions)
    ios: IosOptions = field(default_factory=IosOptions)
    seed: int = 0

    def instants(self) -> list[datetime]:
        out = [e.recorded_at for e in self.ecg_events]
        out += [e.synced_at for e in self.ecg_events if e.synced_at]
        for e in self.ecg_events:
            if e.referred:
                out.append(e.referred.requested_at)
                if e.referred.completed_at:
                    out.append(e.referred.completed_at)
        out += [b.recorded_at for b in self.bp_events]
        out += [w.recorded_at for w in self.weight_events]
        if self.app_first_used:
            out.append(self.app_first_used)
        return out

    def validate(self) -> None:
        uuids = [e.uuid for e in self.ecg_events]
        if len(set(u.lower() for u in uuids)) != len(uuids):
            raise ValueError("ECG uuids must be unique")
        for u in uuids:
            if not atc.UUID_RE.match(u):
                raise ValueError(f"not a hyphenated UUID: {u!r}")
        if self.window is not None:
            lo, hi = self.window
            for t in self.instants():
                if not lo <= t <= hi:
                    raise ValueError(f"event at {t.isoformat()} lies outside the case window")


# --------------------------------------------------------------------------
# scenarios

def _uuid(rng: random.Random) -> str:
    return str(uuidlib.UUID(int=rng.getrandbits(128), version=4))


def _instant(rng: random.Random, base: datetime, whole_seconds: bool) -> datetime:
    return base if whole_seconds else base + timedelta(milliseconds=rng.randrange(1000))


def default_truth(seed: int = 0) -> CaseGroundTruth:
    """One initial referred recording, then two recordings a day for five days."""
    rng = random.Random(seed)
    offset = -18000
    # local 2018-05-20 08:00 at UTC-5
    day0 = datetime(2018, 5, 20, 13, 0, tzinfo=UTC)
    ecgs = []
    initial_at = day0 - timedelta(days=1) + timedelta(hours=6, minutes=rng.randrange(60), seconds=rng.randrange(60))
    initial_at = _instant(rng, initial_at, False)
    ecgs.append(EcgEvent(
        uuid=_uuid(rng), recorded_at=initial_at, heart_rate_bpm=rng.randrange(60, 90),
        has_audio=True, server_id=str(rng.randrange(10**8, 10**9)),
        referred=Referral(initial_at + timedelta(seconds=45), initial_at + timedelta(hours=3), "Normal"),
        synced_at=initial_at + timedelta(seconds=30), comment="initial recording",
    ))
    for day in range(5):
        for hour in (0, 12):
            at = day0 + timedelta(days=day, hours=hour, minutes=rng.randrange(60), seconds=rng.randrange(60))
            at = _instant(rng, at, False)
            has_audio = rng.random() < 0.5
            ecgs.append(EcgEvent(
                uuid=_uuid(rng), recorded_at=at, heart_rate_bpm=rng.randrange(55, 100),
                inverted=int(rng.random() < 0.2), has_audio=has_audio,
                server_id=str(rng.randrange(10**8, 10**9)),
                synced_at=at + timedelta(seconds=rng.randrange(5, 120)),
                comment="voice note" if has_audio else None,
                is_resting=rng.random() < 0.8,
            ))
    bps = [
        BpEvent(day0 + timedelta(days=d, hours=1), 118 + d, 76 + d, 70 + d, "manual")
        for d in (0, 2, 4)
    ]
    weights = [
        WeightEvent(day0 + timedelta(days=d, hours=1, minutes=5), convert_units(lb, "lb", "kg"), 182.88, "manual")
        for d, lb in ((0, 150), (3, 151))
    ]
    first = initial_at - timedelta(minutes=20)
    return CaseGroundTruth(
        ecg_events=ecgs, bp_events=bps, weight_events=weights, zone_offset_seconds=offset,
        app_first_used=first.replace(microsecond=0), window=(first - timedelta(days=1), day0 + timedelta(days=6)),
        seed=seed,
    )


def random_truth(seed: int, android: AndroidOptions | None = None, ios: IosOptions | None = None,
                 n_ecg: int | None = None) -> CaseGroundTruth:
    """A randomized but reproducible ground truth for round-trip testing."""
    rng = random.Random(seed)
    android = android or AndroidOptions(epoch_unit=rng.choice(["ms", "s"]), rerooted=rng.random() < 0.3)
    ios = ios or IosOptions(plist_encoding=rng.choice(["xml", "binary"]),
                            fractional_seconds=rng.random() < 0.7, rerooted=rng.random() < 0.3)
    whole = android.epoch_unit == "s" or not ios.fractional_seconds
    start = datetime(2015, 1, 1, tzinfo=UTC) + timedelta(seconds=rng.randrange(10 * 365 * 86400))
    span = timedelta(days=rng.randrange(1, 30))
    offset = rng.choice([-18000, -14400, -25200, 0, 3600, 19800, 32400])

    def when():
        t = start + timedelta(seconds=rng.randrange(int(span.total_seconds())))
        return _instant(rng, t, whole)

    conditions = rng.choice([[], ["Angina"], ["Angina", "Hypertension"], ["Diabetes"]])
    lb = rng.randrange(90, 300)
    inches = rng.randrange(55, 80)
    profile = ProfileTruth(
        first_name=rng.choice(["Test", "Ana", "José", "Li", "O'Brien"]),
        last_name=rng.choice(["Patient", "Smith", "Nguyen", "Müller", "de la Cruz"]),
        dob=datetime(1930, 1, 1, tzinfo=UTC) + timedelta(days=rng.randrange(365 * 75)),
        height_cm=round(convert_units(inches, "in", "cm"), 6),
        weight_kg=convert_units(lb, "lb", "kg"),
        gender=rng.randrange(2),
        smoker=rng.randrange(2),
        email=f"user{rng.randrange(10**6)}@example.com",
        country=rng.choice(["US", "GB", "IE", "IN"]),
        medical_conditions=conditions,
    )
    n = rng.randrange(0, 14) if n_ecg is None else n_ecg
    ecgs = []
    for _ in range(n):
        at = when()
        has_audio = rng.random() < 0.5
        referred = None
        if rng.random() < 0.3:
            req = at + timedelta(seconds=rng.randrange(1, 600))
            done = req + timedelta(seconds=rng.randrange(60, 86400)) if rng.random() < 0.7 else None
            referred = Referral(req, done, rng.choice(ORDER_RESULTS) if done else None)
        ecgs.append(EcgEvent(
            uuid=_uuid(rng), recorded_at=at, duration_ms=rng.choice([30000, 30000, 29870, 15000]),
            heart_rate_bpm=rng.randrange(40, 180), inverted=rng.randrange(2), has_audio=has_audio,
            referred=referred, server_id=str(rng.randrange(10**8, 10**9)) if rng.random() < 0.8 else None,
            comment=rng.choice([None, "after coffee", "felt dizzy", "resting"]),
            synced_at=at + timedelta(seconds=rng.randrange(1, 3600)) if rng.random() < 0.8 else None,
            is_resting=rng.random() < 0.5,
            audio_ext=rng.choice(["m4a", "aac"]),
        ))
    bps = []
    for _ in range(rng.randrange(0, 5)):
        dia = rng.randrange(50, 100)
        bps.append(BpEvent(when(), dia + rng.randrange(15, 70), dia, rng.choice([None, rng.randrange(50, 110)]),
                           rng.choice(["manual", "omron"]), rng.random() < 0.2, rng.choice([None, "left arm"])))
    weights = []
    for _ in range(rng.randrange(0, 4)):
        weights.append(WeightEvent(when(), convert_units(rng.randrange(90, 300), "lb", "kg"),
                                   profile.height_cm, rng.choice(["manual", "scale"])))
    first = start - timedelta(seconds=rng.randrange(1, 86400))
    if whole:
        first = first.replace(microsecond=0)
    else:
        first = _instant(rng, first.replace(microsecond=0), False)
    truth = CaseGroundTruth(
        profile=profile, ecg_events=ecgs, bp_events=bps, weight_events=weights,
        zone_offset_seconds=offset, app_first_used=first,
        window=(first, start + span + timedelta(days=2)), android=android, ios=ios, seed=seed,
    )
    truth.validate()
    return truth


# --------------------------------------------------------------------------
# writing helpers

class _Writer:
    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.written: list[Path] = []

    def write(self, rel: str, data: bytes) -> Path:
        path = self.out_dir / rel
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(data)
        except OSError as exc:
            raise UnwritableTarget(str(exc)) from exc
        self.written.append(path)
        return path

    def mkdir(self, rel: str) -> None:
        try:
            (self.out_dir / rel).mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise UnwritableTarget(str(exc)) from exc

    def manifest(self, name: str, notes: list[str]) -> list[tuple[str, int, str]]:
        entries = sorted(
            (sha256_file(p), p.stat().st_size, p.relative_to(self.out_dir).as_posix()) for p in self.written
        )
        entries.sort(key=lambda e: e[2])
        lines = [f"# {n}" for n in notes] + [f"{d}  {s}  {p}" for d, s, p in entries]
        (self.out_dir / name).write_text("\n".join(lines) + "\n", encoding="utf-8")
        return entries


def _prepare(out_dir, exist_ok: bool = False) -> Path:
    out_dir = Path(out_dir)
    if out_dir.exists():
        if not out_dir.is_dir():
            raise UnwritableTarget(f"{out_dir} is not a directory")
        if not exist_ok and any(out_dir.iterdir()):
            raise OutDirNotEmpty(f"{out_dir} is not empty")
    else:
        try:
            out_dir.mkdir(parents=True)
        except OSError as exc:
            raise UnwritableTarget(str(exc)) from exc
    return out_dir


def _whole(t: datetime) -> bool:
    return t.microsecond == 0


def _ms(t: datetime) -> datetime:
    return t.replace(microsecond=t.microsecond // 1000 * 1000)


def atc_bytes(uuid: str, recorded_at: datetime, offset: int, recorder: str) -> bytes:
    """A container with a documented info header and an opaque sample chunk."""
    header = encode_utc(_ms(recorded_at), Encoding.ISO8601_WITH_OFFSET, offset)
    info = atc.build_info_payload(header, uuid, tuple(s for s in recorder.split("|") if s))
    seed = hashlib.sha256(uuid.encode()).digest()
    samples = (seed * 19)[:600]
    f = atc.AtcFile(chunks=(atc.AtcChunk.make("info", info), atc.AtcChunk.make("ecg ", samples)))
    return atc.serialize_atc(f)


def audio_stub(ext: str) -> bytes:
    if ext == "aac":
        # one ADTS frame header followed by silence
        return bytes.fromhex("FFF15080017FFC") + bytes(64)
    ftyp = b"ftyp" + b"M4A " + (512).to_bytes(4, "big") + b"isomM4A "
    box = (8 + len(ftyp) - 4).to_bytes(4, "big")
    mdat = (8 + 64).to_bytes(4, "big") + b"mdat" + bytes(64)
    return box + ftyp + mdat


def pdf_stub(title: str) -> bytes:
    """A minimal valid single-page PDF."""
    text = title.replace("\\", "\\\\").replace("(", "\\(").replace(")", "\\)")
    stream = f"BT /F1 12 Tf 72 720 Td ({text}) Tj ET".encode("latin-1", "replace")
    objs = [
        b"<< /Type /Catalog /Pages 2 0 R >>",
        b"<< /Type /Pages /Kids [3 0 R] /Count 1 >>",
        b"<< /Type /Page /Parent 2 0 R /MediaBox [0 0 612 792] /Contents 4 0 R "
        b"/Resources << /Font << /F1 5 0 R >> >> >>",
        b"<< /Length %d >>\nstream\n" % len(stream) + stream + b"\nendstream",
        b"<< /Type /Font /Subtype /Type1 /BaseFont /Helvetica >>",
    ]
    out = bytearray(b"%PDF-1.4\n")
    offsets = []
    for i, body in enumerate(objs, 1):
        offsets.append(len(out))
        out += b"%d 0 obj\n" % i + body + b"\nendobj\n"
    xref = len(out)
    out += b"xref\n0 %d\n0000000000 65535 f \n" % (len(objs) + 1)
    out += b"".join(b"%010d 00000 n \n" % o for o in offsets)
    out += b"trailer\n<< /Size %d /Root 1 0 R >>\nstartxref\n%d\n%%%%EOF\n" % (len(objs) + 1, xref)
    return bytes(out)


def _prefs_xml(entries: list[tuple[str, str, object]]) -> bytes:
    lines = ["<?xml version='1.0' encoding='utf-8' standalone='yes' ?>", "<map>"]
    for kind, name, value in entries:
        if kind == "string":
            lines.append(f"    <string name={quoteattr(name)}>{escape(str(value))}</string>")
        elif kind == "boolean":
            lines.append(f"    <boolean name={quoteattr(name)} value=\"{'true' if value else 'false'}\" />")
        elif kind == "float":
            lines.append(f"    <float name={quoteattr(name)} value=\"{value!r}\" />")
        else:
            lines.append(f"    <{kind} name={quoteattr(name)} value=\"{value}\" />")
    lines.append("</map>")
    return ("\n".join(lines) + "\n").encode("utf-8")


def _sqlite(path: Path, script: list[tuple[str, list]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    con = sqlite3.connect(path)
    try:
        with con:
            for sql, rows in script:
                if rows is None:
                    con.execute(sql)
                elif rows:
                    con.executemany(sql, rows)
    finally:
        con.close()


# --------------------------------------------------------------------------
# Android

ANDROID_SCHEMA = [
    'CREATE TABLE ECG (_id INTEGER PRIMARY KEY, uuid TEXT, server_id TEXT, "data Recorded" INTEGER, '
    "recorded_offset INTEGER, duration INTEGER, heart_rate INTEGER, inverted INTEGER, height REAL, "
    "weight REAL, gender INTEGER, smoker INTEGER, has_audio_file INTEGER, first_name TEXT, "
    "last_name TEXT, dob INTEGER)",
    "CREATE TABLE bp_records (_id INTEGER PRIMARY KEY, timestamp INTEGER, timestamp_offset INTEGER, "
    "deleted INTEGER, systolic INTEGER, diastolic INTEGER, heart_rate INTEGER, source TEXT)",
    "CREATE TABLE Weight_records (_id INTEGER PRIMARY KEY, timestamp INTEGER, timestamp_offset INTEGER, "
    "weight REAL, height REAL, source TEXT)",
    "CREATE TABLE Orders (_id INTEGER PRIMARY KEY, ecg_id TEXT, result TEXT, requested INTEGER, received INTEGER)",
] + [f"CREATE TABLE z_opaque_{i:02d} (_id INTEGER PRIMARY KEY, payload BLOB)" for i in range(1, OPAQUE_TABLE_COUNT + 1)]


def android_root(truth: CaseGroundTruth) -> str:
    return ("partition0/" if truth.android.rerooted else "") + ANDROID_ROOT


def gen_android_dump(truth: CaseGroundTruth, out_dir, *, exist_ok: bool = False) -> list[tuple[str, int, str]]:
    """Write an Android dump for ``truth``; returns ``(digest, size, path)`` manifest rows.

    ``exist_ok`` lets a second layout be added next to an existing one.
    """
    truth.validate()
    unit = truth.android.epoch_unit
    if unit not in ("ms", "s"):
        raise ValueError(f"epoch_unit must be 'ms' or 's', got {unit!r}")
    if unit == "s":
        bad = [t for t in truth.instants() + [truth.profile.dob] if not _whole(t)]
        if bad:
            raise ValueError("second-resolution epochs cannot hold sub-second instants")
    enc = Encoding.EPOCH_MILLIS_GMT if unit == "ms" else Encoding.EPOCH_SECONDS_GMT
    out = _prepare(out_dir, exist_ok)
    w = _Writer(out)
    root = android_root(truth)
    off = truth.zone_offset_seconds
    p = truth.profile

    def ep(t):
        return encode_utc(_ms(t), enc)

    def millis(t):
        return encode_utc(_ms(t), Encoding.EPOCH_MILLIS_GMT)

    for d in ("databases", "files/ecgs", "files/temp", "shared_prefs"):
        w.mkdir(f"{root}/{d}")

    ecg_rows, orders = [], []
    for i, e in enumerate(truth.ecg_events, 1):
        ecg_rows.append((i, e.uuid, e.server_id, ep(e.recorded_at), off, e.duration_ms, e.heart_rate_bpm,
                         e.inverted, p.height_cm, p.weight_kg, p.gender, p.smoker, int(e.has_audio),
                         p.first_name, p.last_name, ep(p.dob)))
        if e.referred:
            r = e.referred
            orders.append((len(orders) + 1, e.uuid, r.result, ep(r.requested_at),
                           ep(r.completed_at) if r.completed_at else None))
    bp_rows = [(i, ep(b.recorded_at), off, int(b.deleted), b.systolic, b.diastolic, b.heart_rate_bpm, b.source)
               for i, b in enumerate(truth.bp_events, 1)]
    wt_rows = [(i, ep(x.recorded_at), off, x.weight_kg, x.height_cm, x.source)
               for i, x in enumerate(truth.weight_events, 1)]
    db = out / root / "databases/ECG.db"
    _sqlite(db, [(s, None) for s in ANDROID_SCHEMA] + [
        ("INSERT INTO ECG VALUES (" + ",".join("?" * 16) + ")", ecg_rows),
        ("INSERT INTO bp_records VALUES (?,?,?,?,?,?,?,?)", bp_rows),
        ("INSERT INTO Weight_records VALUES (?,?,?,?,?,?)", wt_rows),
        ("INSERT INTO Orders VALUES (?,?,?,?,?)", orders),
    ])
    w.written.append(db)

    for e in truth.ecg_events:
        data = atc_bytes(e.uuid, e.recorded_at, off, truth.android.recorder)
        # two container files per reading
        w.write(f"{root}/files/ecgs/{e.uuid}.atc", data)
        w.write(f"{root}/files/ecgs/{e.uuid}_enhanced.atc", data)
        if e.has_audio:
            w.write(f"{root}/files/{e.uuid}.{e.audio_ext}", audio_stub(e.audio_ext))
        if e.referred:
            w.write(f"{root}/files/temp/{e.uuid}.pdf", pdf_stub(f"ECG {e.uuid} {p.first_name} {p.last_name}"))

    w.write(f"{root}/shared_prefs/userprofile.xml", _prefs_xml([
        ("string", "first_name", p.first_name),
        ("string", "last_name", p.last_name),
        ("long", "dob", millis(p.dob)),
        ("float", "weight", p.weight_kg),
        ("string", "email", p.email),
        ("string", "country", p.country),
        ("int", "smoker", p.smoker),
    ]))
    prefs = [("string", "email", p.email)]
    for key, events in (("last_bp_recording", truth.bp_events), ("last_weight_recording", truth.weight_events),
                        ("last_heart_rate_recording", truth.ecg_events)):
        if events:
            prefs.append(("long", key, millis(max(ev.recorded_at for ev in events))))
    prefs += [("int", "recording_duration_seconds", 30), ("boolean", "voice_notes_enabled", True),
              ("int", "premium_trial_days", 30)]
    w.write(f"{root}/shared_prefs/com.alivecor.aliveecg_preferences.xml", _prefs_xml(prefs))
    measurement = [("long", "first_open_time", millis(truth.app_first_used))] if truth.app_first_used else []
    measurement.append(("boolean", "measurement_enabled", True))
    w.write(f"{root}/shared_prefs/com.google.android.gms.measurement_prefs.xml", _prefs_xml(measurement))
    return w.manifest("MANIFEST-android.txt", _notes(truth))


def _notes(truth: CaseGroundTruth) -> list[str]:
    notes = [f"seed: {truth.seed}"]
    if any(e.referred for e in truth.ecg_events):
        notes.append("synthetic: order result strings are placeholders (" + ", ".join(ORDER_RESULTS) + ")")
    return notes


# --------------------------------------------------------------------------
# iOS

IOS_SCHEMA = [
    "CREATE TABLE ZECG (Z_PK INTEGER PRIMARY KEY, Z_ENT INTEGER, Z_OPT INTEGER, ZDATERECORDED TIMESTAMP, "
    "ZHEARTRATE INTEGER, ZCOMMENT VARCHAR, ZFILENAME VARCHAR, ZDATESYNCED TIMESTAMP, ZDURATION_MS INTEGER, "
    "ZMC_ANGINA INTEGER, ZHAS_AUDIO_DESCRIPTION INTEGER, ZINVERTED INTEGER, Z_IS_RESTING_HEART_RATE INTEGER, "
    "ZUUID VARCHAR, ZMALE INTEGER, ZPATIENTFIRSTNAME VARCHAR, ZPATIENTLASTNAME VARCHAR, "
    "ZPATIENTDOB TIMESTAMP, ZHEIGHT FLOAT)",
    "CREATE TABLE ZKDMBLOODPRESSURERECORDING (Z_PK INTEGER PRIMARY KEY, Z_ENT INTEGER, Z_OPT INTEGER, "
    "ZDATE TIMESTAMP, ZSYSTOLIC INTEGER, ZDIASTOLIC INTEGER, ZHEARTRATE INTEGER, ZNOTES VARCHAR)",
    "CREATE TABLE ZKDMWEIGHT (Z_PK INTEGER PRIMARY KEY, Z_ENT INTEGER, Z_OPT INTEGER, ZDATE TIMESTAMP, "
    "ZWEIGHT FLOAT, ZHEIGHT FLOAT, ZSOURCE VARCHAR)",
    "CREATE TABLE ZOVERREADERORDER (Z_PK INTEGER PRIMARY KEY, Z_ENT INTEGER, Z_OPT INTEGER, ZECG INTEGER, "
    "ZDATEREQUESTED TIMESTAMP, ZDATECOMPLETED TIMESTAMP, ZRESULT VARCHAR)",
    "CREATE TABLE Z_PRIMARYKEY (Z_ENT INTEGER PRIMARY KEY, Z_NAME VARCHAR, Z_SUPER INTEGER, Z_MAX INTEGER)",
    "CREATE TABLE Z_METADATA (Z_VERSION INTEGER PRIMARY KEY, Z_UUID VARCHAR(255), Z_PLIST BLOB)",
]


def ios_root(truth: CaseGroundTruth) -> str:
    if truth.ios.rerooted:
        container = str(uuidlib.UUID(int=random.Random(truth.seed ^ 0x105).getrandbits(128), version=4)).upper()
        return f"{IOS_CONTAINERS}/{container}/{IOS_APP}"
    return f"{IOS_CONTAINERS}/{IOS_APP}"


def gen_ios_dump(truth: CaseGroundTruth, out_dir, *, exist_ok: bool = False) -> list[tuple[str, int, str]]:
    truth.validate()
    opts = truth.ios
    if opts.plist_encoding not in ("xml", "binary"):
        raise ValueError(f"plist_encoding must be 'xml' or 'binary', got {opts.plist_encoding!r}")
    if not opts.fractional_seconds and any(not _whole(t) for t in truth.instants()):
        raise ValueError("integer Mac absolute values cannot hold sub-second instants")
    if not _whole(truth.profile.dob):
        raise ValueError("plist dates hold whole seconds only")
    out = _prepare(out_dir, exist_ok)
    w = _Writer(out)
    root = ios_root(truth)
    off = truth.zone_offset_seconds
    p = truth.profile

    def mac(t):
        return encode_utc(_ms(t), Encoding.MAC_ABSOLUTE_SECONDS)

    for d in ("Documents/ecgfiles", "Library/Preferences"):
        w.mkdir(f"{root}/{d}")

    angina = int("angina" in {c.lower() for c in p.medical_conditions})
    ecg_rows, orders = [], []
    for pk, e in enumerate(truth.ecg_events, 1):
        ecg_rows.append((pk, 1, 1, mac(e.recorded_at), e.heart_rate_bpm, e.comment, f"{e.uuid}.atc",
                         mac(e.synced_at) if e.synced_at else None, e.duration_ms, angina, int(e.has_audio),
                         e.inverted, int(e.is_resting), e.uuid, p.gender, p.first_name, p.last_name,
                         mac(p.dob), p.height_cm))
        if e.referred:
            r = e.referred
            orders.append((len(orders) + 1, 4, 1, pk, mac(r.requested_at),
                           mac(r.completed_at) if r.completed_at else None, r.result))
    bp_rows = [(i, 2, 1, mac(b.recorded_at), b.systolic, b.diastolic, b.heart_rate_bpm, b.notes)
               for i, b in enumerate(truth.bp_events, 1)]
    wt_rows = [(i, 3, 1, mac(x.recorded_at), x.weight_kg, x.height_cm, x.source)
               for i, x in enumerate(truth.weight_events, 1)]
    pk_rows = [(1, "ECG", 0, len(ecg_rows)), (2, "KDMBloodPressureRecording", 0, len(bp_rows)),
               (3, "KDMWeight", 0, len(wt_rows)), (4, "OverreaderOrder", 0, len(orders))]
    store_uuid = str(uuidlib.UUID(int=random.Random(truth.seed).getrandbits(128), version=4)).upper()
    db = out / root / "Documents/AliveECGDB.sqlite"
    _sqlite(db, [(s, None) for s in IOS_SCHEMA] + [
        ("INSERT INTO ZECG VALUES (" + ",".join("?" * 19) + ")", ecg_rows),
        ("INSERT INTO ZKDMBLOODPRESSURERECORDING VALUES (?,?,?,?,?,?,?,?)", bp_rows),
        ("INSERT INTO ZKDMWEIGHT VALUES (?,?,?,?,?,?,?)", wt_rows),
        ("INSERT INTO ZOVERREADERORDER VALUES (?,?,?,?,?,?,?)", orders),
        ("INSERT INTO Z_PRIMARYKEY VALUES (?,?,?,?)", pk_rows),
        ("INSERT INTO Z_METADATA VALUES (?,?,?)", [(1, store_uuid, b"")]),
    ])
    w.written.append(db)

    for e in truth.ecg_events:
        w.write(f"{root}/Documents/ecgfiles/{e.uuid}.atc", atc_bytes(e.uuid, e.recorded_at, off, opts.recorder))
        if e.has_audio:
            w.write(f"{root}/Documents/{e.uuid}.m4a", audio_stub("m4a"))

    doc = {
        "firstName": p.first_name,
        "lastName": p.last_name,
        "gender": p.gender,
        "dob": p.dob.replace(tzinfo=None),
        "heightCm": p.height_cm,
        "email": p.email,
        "medicalConditions": list(p.medical_conditions),
        "appVersion": truth.app_version,
        "voiceNotesEnabled": True,
    }
    if truth.app_first_used:
        doc["firstLaunchDate"] = mac(truth.app_first_used)
    fmt = plistlib.FMT_BINARY if opts.plist_encoding == "binary" else plistlib.FMT_XML
    w.write(f"{root}/Library/Preferences/{IOS_APP}.plist", plistlib.dumps(doc, fmt=fmt, sort_keys=True))
    return w.manifest("MANIFEST-ios.txt", _notes(truth))


# --------------------------------------------------------------------------
# mutations

class Mutation(str, Enum):
    NONE = "none"
    TRUNCATE_ATC = "truncate-atc"
    ORPHAN_AUDIO = "orphan-audio"
    CLOCK_SKEW = "clock-skew"
    DROP_TABLE = "drop-table"
    DESYNC_PROFILE = "desync-profile"
    UUID_MISMATCH = "uuid-mismatch"


# the single warning code each mutation must provoke
EXPECTED_CODE = {
    Mutation.NONE: None,
    Mutation.TRUNCATE_ATC: "Truncation",
    Mutation.ORPHAN_AUDIO: "OrphanAudio",
    Mutation.CLOCK_SKEW: "ClockSkew",
    Mutation.DROP_TABLE: "MissingTable",
    Mutation.DESYNC_PROFILE: "ProfileMismatch",
    Mutation.UUID_MISMATCH: "UuidMismatch",
}


def _find_app(dump: Path, only: str | None = None) -> tuple[str, Path]:
    for platform, name in (("android", "com.alivecor.aliveecg"), ("ios", IOS_APP)):
        if only and platform != only:
            continue
        hits = sorted(dump.rglob(name), key=lambda p: (len(p.parts), p.as_posix()))
        hits = [h for h in hits if h.is_dir()]
        if hits:
            return platform, hits[0]
    raise ValueError(f"no generated app tree under {dump}")


def _target_atcs(app: Path) -> list[Path]:
    files = sorted(app.rglob("*.atc"))
    if not files:
        raise ValueError("mutation needs at least one .atc file")
    uid = files[0].name[:36]
    return [f for f in files if f.name.startswith(uid)]


def _rewrite_info(path: Path, **changes) -> None:
    f = atc.parse_atc(path.read_bytes())
    info = f.info
    fields = {"recorded_at_text": info.recorded_at_text, "uuid_text": info.uuid_text}
    fields.update(changes)
    payload = atc.build_info_payload(fields["recorded_at_text"], fields["uuid_text"], info.recorder_info,
                                     len(info.raw))
    chunks = tuple(atc.AtcChunk.make("info", payload) if c.chunk_id == atc.INFO_ID else c for c in f.chunks)
    path.write_bytes(atc.serialize_atc(replace(f, chunks=chunks)))


def mutate_dump(dump_dir, mutation: Mutation | str, platform: str | None = None) -> str:
    """Apply one controlled corruption to a generated dump and describe it.

    ``platform`` ("android" or "ios") picks the layout when a dump holds both.
    """
    mutation = Mutation(mutation)
    dump = Path(dump_dir)
    if mutation is Mutation.NONE:
        return "no mutation applied"
    platform, app = _find_app(dump, platform)

    if mutation is Mutation.TRUNCATE_ATC:
        targets = _target_atcs(app)
        for t in targets:
            data = t.read_bytes()
            t.write_bytes(data[: len(data) - 100])
        return f"truncated {len(targets)} .atc file(s) for {targets[0].name[:36]} by 100 bytes"

    if mutation is Mutation.ORPHAN_AUDIO:
        audio_dir = app / ("files" if platform == "android" else "Documents")
        name = str(uuidlib.UUID(bytes=hashlib.sha256(str(app).encode()).digest()[:16], version=4)) + ".m4a"
        (audio_dir / name).write_bytes(audio_stub("m4a"))
        return f"added orphan audio {name}"

    if mutation in (Mutation.CLOCK_SKEW, Mutation.UUID_MISMATCH):
        targets = _target_atcs(app)
        info = atc.parse_atc(targets[0].read_bytes()).info
        if mutation is Mutation.CLOCK_SKEW:
            ts = info.recorded_at
            skewed = encode_utc(ts.utc + timedelta(seconds=5), Encoding.ISO8601_WITH_OFFSET, ts.offset_seconds)
            for t in targets:
                _rewrite_info(t, recorded_at_text=skewed)
            return f"shifted header clock of {targets[0].name[:36]} by +5 s"
        other = str(uuidlib.UUID(bytes=hashlib.sha256(info.uuid_text.encode()).digest()[:16], version=4))
        for t in targets:
            _rewrite_info(t, uuid_text=other)
        return f"replaced header UUID of {targets[0].name[:36]} with {other}"

    if mutation is Mutation.DROP_TABLE:
        if platform == "android":
            db, table = app / "databases/ECG.db", "Weight_records"
        else:
            db, table = app / "Documents/AliveECGDB.sqlite", "ZKDMWEIGHT"
        con = sqlite3.connect(db)
        try:
            with con:
                con.execute(f"DROP TABLE {table}")
        finally:
            con.close()
        return f"dropped table {table}"

    # DESYNC_PROFILE
    if platform == "android":
        path = app / "shared_prefs/userprofile.xml"
        text = path.read_text(encoding="utf-8")
        start = text.index('<string name="first_name">') + len('<string name="first_name">')
        end = text.index("</string>", start)
        path.write_text(text[:start] + "Tampered" + text[end:], encoding="utf-8")
        return "changed first_name in userprofile.xml"
    path = app / f"Library/Preferences/{IOS_APP}.plist"
    data = path.read_bytes()
    fmt = plistlib.FMT_BINARY if data.startswith(b"bplist") else plistlib.FMT_XML
    doc = plistlib.loads(data)
    doc["firstName"] = "Tampered"
    path.write_bytes(plistlib.dumps(doc, fmt=fmt, sort_keys=True))
    return "changed firstName in the preferences plist"


# --------------------------------------------------------------------------
# ground-truth documents

_TOP_FIELDS = {"scenario", "seed", "profile", "ecg_events", "bp_events", "weight_events", "zone_offset_seconds",
               "app_first_used", "app_version", "android", "ios", "window"}
_TIME_FIELDS = {"dob", "recorded_at", "synced_at", "requested_at", "completed_at"}


def _line(node) -> int | None:
    return node.start_mark.line + 1 if node is not None else None


def _dt(node) -> datetime:
    value = yaml.safe_load(yaml.serialize(node)) if isinstance(node, yaml.Node) else node
    if isinstance(value, datetime):
        return value if value.tzinfo else value.replace(tzinfo=UTC)
    if hasattr(value, "year"):
        return datetime(value.year, value.month, value.day, tzinfo=UTC)
    if isinstance(value, str):
        from .errors import UnparseableRaw
        from .evidence import ForensicTimestamp

        try:
            return ForensicTimestamp(value, Encoding.ISO8601_WITH_OFFSET).utc
        except UnparseableRaw as exc:
            raise TruthSpecError(str(exc), _line(node)) from None
    raise TruthSpecError(f"expected a timestamp, got {value!r}", _line(node))


def _scalar(node):
    return yaml.safe_load(yaml.serialize(node))


def _mapping(node, what: str) -> list[tuple[str, yaml.Node]]:
    if not isinstance(node, yaml.MappingNode):
        raise TruthSpecError(f"{what} must be a mapping", _line(node))
    return [(k.value, v) for k, v in node.value]


def _build(cls, node, what: str):
    known = {f for f in cls.__dataclass_fields__}
    kwargs = {}
    for key, value in _mapping(node, what):
        if key not in known:
            raise TruthSpecError(f"{what}: unknown field {key!r}", _line(value))
        if key == "referred":
            kwargs[key] = None if _scalar(value) is None else _build(Referral, value, "referred")
        elif key in _TIME_FIELDS:
            kwargs[key] = None if _scalar(value) is None else _dt(value)
        else:
            kwargs[key] = _scalar(value)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise TruthSpecError(f"{what}: {exc}", _line(node)) from None


def _build_list(cls, node, what: str) -> list:
    if _scalar(node) is None:
        return []
    if not isinstance(node, yaml.SequenceNode):
        raise TruthSpecError(f"{what} must be a list", _line(node))
    return [_build(cls, item, what) for item in node.value]


def load_truth(text: str) -> CaseGroundTruth:
    """Build a ground truth from a YAML document.

    ``scenario`` selects a base (``default``, ``random`` or ``empty``) whose
    top-level fields may then be overridden. Errors carry the 1-based line of
    the offending node.
    """
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise TruthSpecError(str(getattr(exc, "problem", None) or exc), mark.line + 1 if mark else None) from None
    fields = dict(_mapping(root, "document")) if root is not None else {}
    for key, node in fields.items():
        if key not in _TOP_FIELDS:
            raise TruthSpecError(f"unknown field {key!r}", _line(node))

    seed = _scalar(fields["seed"]) if "seed" in fields else 0
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise TruthSpecError("seed must be an integer", _line(fields["seed"]))
    scenario = _scalar(fields["scenario"]) if "scenario" in fields else "default"
    if scenario == "default":
        truth = default_truth(seed)
    elif scenario == "random":
        truth = random_truth(seed)
    elif scenario == "empty":
        truth = CaseGroundTruth(seed=seed)
    else:
        raise TruthSpecError(f"unknown scenario {scenario!r}", _line(fields["scenario"]))

    for key, node in fields.items():
        if key == "profile":
            truth.profile = _build(ProfileTruth, node, "profile")
        elif key == "ecg_events":
            truth.ecg_events = _build_list(EcgEvent, node, "ecg_events")
        elif key == "bp_events":
            truth.bp_events = _build_list(BpEvent, node, "bp_events")
        elif key == "weight_events":
            truth.weight_events = _build_list(WeightEvent, node, "weight_events")
        elif key == "android":
            truth.android = _build(AndroidOptions, node, "android")
        elif key == "ios":
            truth.ios = _build(IosOptions, node, "ios")
        elif key == "app_first_used":
            truth.app_first_used = _dt(node)
        elif key == "window":
            if not isinstance(node, yaml.SequenceNode) or len(node.value) != 2:
                raise TruthSpecError("window must be a [start, end] pair", _line(node))
            truth.window = (_dt(node.value[0]), _dt(node.value[1]))
        elif key == "zone_offset_seconds":
            value = _scalar(node)
            if not isinstance(value, int) or not -86400 < value < 86400:
                raise TruthSpecError("zone_offset_seconds must be an integer within one day", _line(node))
            truth.zone_offset_seconds = value
        elif key == "app_version":
            truth.app_version = str(_scalar(node))
    truth.seed = seed
    try:
        truth.validate()
    except ValueError as exc:
        raise TruthSpecError(str(exc)) from None
    return truth
