"""Helpers shared by the Android and iOS extractors."""

from __future__ import annotations

import logging
import os
import sqlite3
from dataclasses import replace
from pathlib import Path
from urllib.parse import quote

from . import atc
from .errors import AtcError, NotADatabase
from .evidence import (
    CaseFile,
    Category,
    EvidenceItem,
    Platform,
    Provenance,
)

log = logging.getLogger(__name__)

SQLITE_MAGIC = b"SQLite format 3\x00"
AUDIO_EXTS = {".m4a", ".aac"}
DB_SUFFIXES = (".db", ".sqlite", ".sqlite3", "-wal", "-shm", "-journal")
CLOCK_SKEW_TOLERANCE_MS = 1000
WEIGHT_RANGE_KG = (1.0, 500.0)
HEIGHT_RANGE_CM = (30.0, 250.0)


def find_named_dirs(dump_root: Path, name: str) -> list[Path]:
    """All directories called ``name`` below ``dump_root``, shortest then lexicographic."""
    hits = []
    for dirpath, dirnames, _ in os.walk(dump_root):
        dirnames.sort()
        if name in dirnames:
            hits.append(Path(dirpath, name))
    return sorted(hits, key=lambda p: (len(p.relative_to(dump_root).parts), p.relative_to(dump_root).as_posix()))


def walk_files(root: Path) -> list[Path]:
    out = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        out.extend(Path(dirpath, f) for f in sorted(filenames))
    return out


def categorize(path: Path) -> Category:
    name = path.name.lower()
    suffix = path.suffix.lower()
    if suffix == ".atc":
        return Category.ATC_ECG
    if suffix in AUDIO_EXTS:
        return Category.AUDIO_NOTE
    if suffix == ".pdf":
        return Category.PDF_REFERRAL
    if name.endswith(DB_SUFFIXES):
        return Category.DATABASE
    if suffix == ".xml" and path.parent.name == "shared_prefs":
        return Category.PREFS_XML
    if suffix == ".plist":
        return Category.PLIST
    return Category.UNKNOWN


def catalog(case: CaseFile, dump_root: Path, app_root: Path, platform: Platform) -> None:
    """Hash every file under the app root into ``case.items``."""
    for path in walk_files(app_root):
        if path.is_symlink() or not path.is_file():
            case.warn("UnreadableFile", "not a regular file", Provenance(path.relative_to(dump_root).as_posix()))
            continue
        try:
            case.items.append(EvidenceItem.from_file(dump_root, path, categorize(path), platform))
        except OSError as exc:
            case.warn("UnreadableFile", str(exc), Provenance(path.relative_to(dump_root).as_posix()))


def open_readonly(db_path: Path) -> sqlite3.Connection:
    """Open an SQLite file without any chance of writing to it or its side files.

    ``immutable=1`` stops SQLite from creating -shm/-wal files or taking locks;
    pending WAL content is therefore never replayed into the view.
    """
    try:
        with open(db_path, "rb") as fh:
            head = fh.read(len(SQLITE_MAGIC))
    except OSError as exc:
        raise NotADatabase(f"{db_path}: {exc}") from exc
    if head != SQLITE_MAGIC:
        raise NotADatabase(f"{db_path}: missing SQLite header")
    uri = "file:" + quote(str(Path(db_path).resolve())) + "?mode=ro&immutable=1"
    con = sqlite3.connect(uri, uri=True)
    con.row_factory = sqlite3.Row
    try:
        con.execute("SELECT count(*) FROM sqlite_master").fetchone()
    except sqlite3.DatabaseError as exc:
        con.close()
        raise NotADatabase(f"{db_path}: {exc}") from exc
    return con


def table_census(con: sqlite3.Connection) -> dict[str, int]:
    names = [r[0] for r in con.execute(
        "SELECT name FROM sqlite_master WHERE type='table' AND name NOT LIKE 'sqlite_%' ORDER BY name"
    )]
    census = {}
    for name in names:
        quoted = '"' + name.replace('"', '""') + '"'
        census[name] = con.execute(f"SELECT count(*) FROM {quoted}").fetchone()[0]
    return census


def find_table(census: dict[str, int], name: str) -> str | None:
    for actual in census:
        if actual.lower() == name.lower():
            return actual
    return None


def columns(con: sqlite3.Connection, table: str) -> list[str]:
    quoted = '"' + table.replace('"', '""') + '"'
    return [r[1] for r in con.execute(f"PRAGMA table_info({quoted})")]


def pick_column(cols: list[str], *candidates: str) -> str | None:
    """First candidate present in ``cols``, compared case-insensitively."""
    lowered = {c.lower(): c for c in cols}
    for cand in candidates:
        if cand.lower() in lowered:
            return lowered[cand.lower()]
    return None


def select_all(con: sqlite3.Connection, table: str) -> list[sqlite3.Row]:
    quoted = '"' + table.replace('"', '""') + '"'
    try:
        return con.execute(f"SELECT * FROM {quoted} ORDER BY rowid").fetchall()
    except sqlite3.OperationalError:  # WITHOUT ROWID tables
        return con.execute(f"SELECT * FROM {quoted}").fetchall()


class Table:
    """Column resolution for one documented table, warning once per missing column."""

    def __init__(self, con, name, census, sink, db_rel):
        self.name = find_table(census, name)
        self.sink = sink
        self.db_rel = db_rel
        self.cols = columns(con, self.name) if self.name else []
        self.rows = select_all(con, self.name) if self.name else []
        if self.name is None:
            sink.warn("MissingTable", f"table {name} not present", Provenance(db_rel, name))
        self.label = self.name or name

    def col(self, *cands, required=True):
        c = pick_column(self.cols, *cands)
        if c is None and required and self.name is not None:
            self.sink.warn("MissingColumn", f"{self.name}.{cands[0]} not present",
                           Provenance(self.db_rel, f"{self.name}.{cands[0]}"))
        return c

    def prov(self, row_index: int) -> Provenance:
        return Provenance(self.db_rel, f"{self.label}[{row_index}]")


def to_int(value):
    if value is None or isinstance(value, bool):
        return value
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, str) and value.strip().lstrip("-").isdigit():
        return int(value)
    return value


def to_float(value):
    if value is None:
        return None
    try:
        return float(value)
    except (TypeError, ValueError):
        return None


def check_vital(case: CaseFile, name: str, value, bounds, prov: Provenance):
    """Return ``value`` if positive; flag values outside ``bounds``.

    Non-positive values cannot populate the typed field and come back as None,
    with the raw value kept in the warning.
    """
    if value is None:
        return None
    lo, hi = bounds
    if not (lo <= value <= hi):
        case.warn("ImplausibleVitals", f"{name}={value!r} outside {lo}-{hi}", prov)
    return value if value > 0 else None


def code(case: CaseFile, enum_cls, value, prov: Provenance):
    """Map a documented 0/1 code; anything else is flagged and left unset."""
    value = to_int(value)
    if value is None:
        return None
    if value in (0, 1):
        return enum_cls(value)
    case.warn("InvalidCode", f"value {value!r} is not a documented 0/1 code", prov)
    return None


def flag(case: CaseFile, value, prov: Provenance) -> bool | None:
    result = code(case, int, value, prov)
    return None if result is None else bool(result)


# --------------------------------------------------------------------------
# media linking

def uuid_from_name(name: str) -> str | None:
    head = name[:36]
    return head.lower() if atc.UUID_RE.match(head) else None


def link_audio(case: CaseFile) -> None:
    """Attach audio notes to ECG rows by UUID; flag orphans and flag mismatches."""
    by_uuid = {e.uuid.lower(): i for i, e in enumerate(case.ecgs)}
    linked: dict[int, EvidenceItem] = {}
    for item in case.items:
        if item.category is not Category.AUDIO_NOTE:
            continue
        name = item.dump_relative_path.rsplit("/", 1)[-1]
        stem = name.rsplit(".", 1)[0].lower()
        idx = by_uuid.get(stem)
        rule = "exact"
        if idx is None:
            hits = [i for u, i in by_uuid.items() if u in name.lower()]
            idx = hits[0] if len(hits) == 1 else None
            rule = "substring"
        prov = Provenance(item.dump_relative_path)
        if idx is None:
            case.warn("OrphanAudio", f"audio file {name} matches no ECG recording", prov)
            continue
        log.debug("audio %s linked to ECG %s by %s match", name, case.ecgs[idx].uuid, rule)
        if idx in linked:
            case.warn("DuplicateAudio", f"second audio file for ECG {case.ecgs[idx].uuid}", prov)
            continue
        linked[idx] = item
    for i, ecg in enumerate(case.ecgs):
        item = linked.get(i)
        if item is not None:
            case.ecgs[i] = ecg = replace(ecg, audio_item=item)
            if ecg.has_audio is False:
                case.warn("HasAudioMismatch", f"ECG {ecg.uuid} has audio but its flag says none",
                          Provenance(item.dump_relative_path))
        elif ecg.has_audio:
            case.warn("MissingAudio", f"ECG {ecg.uuid} flags an audio file that was not found", ecg.provenance)


def link_atc(case: CaseFile, dump_root: Path, by_filename: bool) -> None:
    """Parse every .atc file, attach it to its ECG row and cross-check the header.

    ``by_filename`` links via the row's stored file name (iOS ZFILENAME);
    otherwise the UUID prefix of the file name is used.
    """
    by_uuid = {e.uuid.lower(): i for i, e in enumerate(case.ecgs)}
    by_file = {e.atc_filename: i for i, e in enumerate(case.ecgs) if e.atc_filename}
    groups: dict[int, list[tuple[EvidenceItem, bytes]]] = {}
    header_offsets: dict[int, int] = {}
    for item in case.items:
        if item.category is not Category.ATC_ECG:
            continue
        prov = Provenance(item.dump_relative_path)
        name = item.dump_relative_path.rsplit("/", 1)[-1]
        try:
            data = (dump_root / item.dump_relative_path).read_bytes()
        except OSError as exc:
            case.warn("UnreadableFile", str(exc), prov)
            continue
        try:
            parsed = atc.parse_atc(data)
        except AtcError as exc:
            case.warn(type(exc).__name__, str(exc), prov)
            parsed = None
        info = None
        if parsed is not None:
            for w in parsed.warnings:
                case.warn(w.code, w.message, prov)
            if parsed.chunk(atc.INFO_ID) is not None:
                info = parsed.info
                for w in info.warnings:
                    case.warn(w.code, w.message, Provenance(item.dump_relative_path, "info"))

        idx = by_file.get(name) if by_filename else None
        if idx is None:
            stem_uuid = uuid_from_name(name)
            idx = by_uuid.get(stem_uuid) if stem_uuid else None
        if idx is None:
            case.warn("OrphanAtc", f"{name} matches no ECG recording", prov)
            continue
        groups.setdefault(idx, []).append((item, data))
        ecg = case.ecgs[idx]
        if info is None:
            continue
        if info.uuid_text and info.uuid_text.lower() != ecg.uuid.lower():
            case.warn("UuidMismatch", f"header UUID {info.uuid_text} differs from ECG {ecg.uuid}",
                      Provenance(item.dump_relative_path, "info.uuid"))
        header_ts = info.recorded_at
        if header_ts is not None and header_ts.offset_seconds is not None:
            header_offsets.setdefault(idx, header_ts.offset_seconds)
        if header_ts is not None and ecg.recorded_at.utc is not None:
            skew = abs(header_ts.epoch_ms - ecg.recorded_at.epoch_ms)
            if skew > CLOCK_SKEW_TOLERANCE_MS:
                case.warn("ClockSkew", f"header time differs from database time by {skew} ms",
                          Provenance(item.dump_relative_path, "info.datetime"))

    for i, ecg in enumerate(case.ecgs):
        members = groups.get(i, [])
        if not members:
            case.warn("MissingAtc", f"no .atc file found for ECG {ecg.uuid}", ecg.provenance)
            continue
        if len({data for _, data in members}) > 1:
            case.warn("AtcDivergence", f"{len(members)} .atc files for ECG {ecg.uuid} differ byte-wise",
                      Provenance(members[0][0].dump_relative_path))
        items = tuple(item for item, _ in members)
        recorded_at = ecg.recorded_at
        if recorded_at.offset_seconds is None and i in header_offsets:
            # the database stores no zone; the container header does
            recorded_at = replace(recorded_at, offset_seconds=header_offsets[i])
        case.ecgs[i] = replace(ecg, recorded_at=recorded_at, atc_items=items, atc_filename=ecg.atc_filename or items[0].dump_relative_path.rsplit("/", 1)[-1])
