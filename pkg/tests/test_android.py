import shutil
import sqlite3
from datetime import datetime, timedelta

import pytest

from alivecor_forensics import android
from alivecor_forensics import fixtures as fx
from alivecor_forensics.errors import AppNotFound, NotADatabase
from alivecor_forensics.evidence import UTC, Category, Encoding, Gender, Orientation, to_local
from helpers import extract, guarded, make_dump, tree_digests

ROOT = "data/data/com.alivecor.aliveecg"
SAMPLE_UUID = "3db73498-32a0-4293-b5f0-7616162c55d8"


def small_truth(**kw):
    t0 = datetime(2018, 5, 24, 19, 55, 59, 115000, tzinfo=UTC)
    truth = fx.CaseGroundTruth(
        ecg_events=[
            fx.EcgEvent(SAMPLE_UUID, t0, has_audio=True, referred=fx.Referral(t0 + timedelta(minutes=1))),
            fx.EcgEvent("0f4b8a51-6a3e-4c36-9a43-5f1f1bbf0c2e", t0 + timedelta(hours=12), inverted=1),
        ],
        bp_events=[fx.BpEvent(t0 + timedelta(hours=1), 121, 79, 66)],
        weight_events=[fx.WeightEvent(t0 + timedelta(hours=2), 68.0388555, 182.88)],
        app_first_used=t0 - timedelta(days=1),
    )
    for k, v in kw.items():
        setattr(truth, k, v)
    return truth


def db_of(dump):
    return dump / ROOT / "databases/ECG.db"


def edit_db(dump, *sql):
    con = sqlite3.connect(db_of(dump))
    with con:
        for s in sql:
            con.execute(s)
    con.close()


# --------------------------------------------------------------------------
# layout

def test_locate_canonical(tmp_path):
    dump = make_dump(tmp_path, "android")
    layout = android.locate_app_root(dump)
    assert layout.app_root == ROOT
    assert layout.missing_dirs() == []


def test_locate_rerooted(tmp_path):
    truth = fx.default_truth()
    truth.android.rerooted = True
    dump = make_dump(tmp_path, "android", truth)
    assert android.locate_app_root(dump).app_root == "partition0/" + ROOT
    case = extract("android", dump)
    assert len(case.ecgs) == 11 and case.warnings == []


def test_locate_prefers_shortest(tmp_path):
    (tmp_path / "b/x/com.alivecor.aliveecg").mkdir(parents=True)
    (tmp_path / "a/x/com.alivecor.aliveecg").mkdir(parents=True)
    (tmp_path / "z/com.alivecor.aliveecg").mkdir(parents=True)
    assert android.locate_app_root(tmp_path).app_root == "z/com.alivecor.aliveecg"
    shutil.rmtree(tmp_path / "z")
    assert android.locate_app_root(tmp_path).app_root == "a/x/com.alivecor.aliveecg"


def test_locate_empty(tmp_path):
    with pytest.raises(AppNotFound):
        android.locate_app_root(tmp_path)


def test_missing_directories_warn(tmp_path):
    (tmp_path / ROOT / "databases").mkdir(parents=True)
    case = extract("android", tmp_path)
    codes = case.warning_codes()
    assert codes.count("MissingDirectory") == 4
    assert "MissingDatabase" in codes


# --------------------------------------------------------------------------
# database

def test_db_counts_and_census(tmp_path):
    dump = make_dump(tmp_path, "android", small_truth())
    out = guarded(android.parse_ecg_db, dump, db_of(dump))
    assert (len(out.ecgs), len(out.bps), len(out.weights), len(out.orders)) == (2, 1, 1, 1)
    assert len(out.table_census) == 13
    assert sorted(out.opaque_tables) == [f"z_opaque_{i:02d}" for i in range(1, 10)]
    assert out.warnings == []
    e = out.ecgs[1]
    assert e.inverted is Orientation.UPSIDE_DOWN and e.patient_snapshot.gender is Gender.MALE


def test_bp_offset_renders_five_hours_behind(tmp_path):
    dump = make_dump(tmp_path, "android", small_truth())
    bp = android.parse_ecg_db(db_of(dump)).bps[0]
    assert bp.recorded_at.offset_seconds == -18000
    assert bp.recorded_at.encoding is Encoding.EPOCH_MILLIS_GMT
    assert to_local(bp.recorded_at) == "2018-05-24T15:55:59.115-05:00"


def test_empty_db(tmp_path):
    dump = make_dump(tmp_path, "android", fx.CaseGroundTruth())
    out = android.parse_ecg_db(db_of(dump))
    assert (out.ecgs, out.bps, out.weights, out.orders, out.warnings) == ([], [], [], [], [])
    assert len(out.table_census) == 13
    case = extract("android", dump)
    assert case.profile is not None and case.ecgs == []


def test_not_a_database(tmp_path):
    f = tmp_path / "ECG.db"
    f.write_bytes(b"not sqlite at all" * 10)
    with pytest.raises(NotADatabase):
        android.parse_ecg_db(f)


def test_corrupt_db_is_warning_in_extract(tmp_path):
    dump = make_dump(tmp_path, "android", small_truth())
    db_of(dump).write_bytes(b"garbage")
    case = extract("android", dump)
    assert "NotADatabase" in case.warning_codes()
    assert case.ecgs == [] and case.profile.first_name == "Test"


def test_missing_table_and_column(tmp_path):
    dump = make_dump(tmp_path, "android", small_truth())
    edit_db(dump, "DROP TABLE Orders", "ALTER TABLE bp_records DROP COLUMN source")
    out = android.parse_ecg_db(db_of(dump))
    codes = [w.code for w in out.warnings]
    assert sorted(codes) == ["MissingColumn", "MissingTable"]
    assert out.orders == [] and len(out.bps) == 1 and out.bps[0].source == ""


@pytest.mark.parametrize("name", ["dataRecorded", "data_recorded", "DATA RECORDED"])
def test_recorded_column_spellings(tmp_path, name):
    dump = make_dump(tmp_path, "android", small_truth())
    edit_db(dump, f'ALTER TABLE ECG RENAME COLUMN "data Recorded" TO "{name}"')
    out = android.parse_ecg_db(db_of(dump))
    assert out.warnings == []
    assert out.ecgs[0].recorded_at.epoch_ms == 1527191759115


def test_epoch_seconds_inferred(tmp_path):
    truth = small_truth()
    for e in truth.ecg_events:
        e.recorded_at = e.recorded_at.replace(microsecond=0)
        e.referred = None
    for b in truth.bp_events + truth.weight_events:
        b.recorded_at = b.recorded_at.replace(microsecond=0)
    truth.app_first_used = truth.app_first_used.replace(microsecond=0)
    truth.android.epoch_unit = "s"
    dump = make_dump(tmp_path, "android", truth)
    out = android.parse_ecg_db(db_of(dump))
    assert out.epoch_unit is Encoding.EPOCH_SECONDS_GMT
    assert out.ecgs[0].recorded_at.epoch_ms == 1527191759000
    assert out.ecgs[0].patient_snapshot.dob.epoch_ms == 315532800000


def test_generator_rejects_subsecond_in_seconds_mode(tmp_path):
    truth = small_truth()
    truth.android.epoch_unit = "s"
    with pytest.raises(ValueError):
        fx.gen_android_dump(truth, tmp_path / "x")


def test_invalid_codes_and_vitals_warn(tmp_path):
    dump = make_dump(tmp_path, "android", small_truth())
    edit_db(dump, "UPDATE ECG SET gender = 2, inverted = 7, weight = 900 WHERE _id = 1",
            "UPDATE bp_records SET systolic = 60, diastolic = 80")
    out = android.parse_ecg_db(db_of(dump))
    codes = sorted(w.code for w in out.warnings)
    assert codes.count("InvalidCode") == 2
    assert "ImplausibleVitals" in codes and "ImplausibleBloodPressure" in codes
    # suspicious values are kept, not repaired
    assert len(out.bps) == 1 and out.bps[0].degenerate
    assert out.ecgs[0].patient_snapshot.weight_kg == 900


def test_dangling_order(tmp_path):
    dump = make_dump(tmp_path, "android", small_truth())
    edit_db(dump, "UPDATE Orders SET ecg_id = 'ffffffff-0000-4000-8000-000000000000'")
    out = android.parse_ecg_db(db_of(dump))
    assert [w.code for w in out.warnings] == ["DanglingOrder"]
    assert len(out.orders) == 1


def test_row_count_conservation(tmp_path):
    truth = fx.random_truth(9, n_ecg=13)
    truth.android.epoch_unit = "ms"
    dump = make_dump(tmp_path, "android", truth)
    out = android.parse_ecg_db(db_of(dump))
    assert len(out.ecgs) == out.table_census["ECG"] == 13
    assert len(out.bps) == out.table_census["bp_records"] == len(truth.bp_events)
    assert len(out.weights) == out.table_census["Weight_records"]
    assert len(out.orders) == out.table_census["Orders"]


def test_wal_side_file_cataloged_not_replayed(tmp_path):
    dump = make_dump(tmp_path, "android", small_truth())
    wal = db_of(dump).with_name("ECG.db-wal")
    wal.write_bytes(b"\x37\x7f\x06\x82" + bytes(28))
    case = extract("android", dump)
    item = case.item_for(f"{ROOT}/databases/ECG.db-wal")
    assert item is not None and item.category is Category.DATABASE
    assert len(case.ecgs) == 2


# --------------------------------------------------------------------------
# shared prefs

def test_profile_from_prefs(tmp_path):
    dump = make_dump(tmp_path, "android", small_truth())
    prefs = android.parse_shared_prefs(dump / ROOT / "shared_prefs", dump)
    by_file = {f.provenance.path.rsplit("/", 1)[-1]: f for f in prefs.fragments}
    up = by_file["userprofile.xml"].values
    assert (up["first_name"], up["last_name"]) == ("Test", "Patient")
    assert up["dob"].epoch_ms == 315532800000 and up["weight_kg"] == 68.0388555
    assert (up["email"], up["country"], int(up["smoker"])) == ("kardia.test@example.com", "US", 0)
    keys = {a.key for a in prefs.app_timestamps}
    assert keys == {"first_open_time", "last_bp_recording", "last_weight_recording", "last_heart_rate_recording"}
    opaque = {p.field for p in prefs.opaque_keys}
    assert {"recording_duration_seconds", "voice_notes_enabled", "premium_trial_days", "measurement_enabled"} <= opaque


def test_only_measurement_prefs(tmp_path):
    dump = make_dump(tmp_path, "android", small_truth())
    prefs_dir = dump / ROOT / "shared_prefs"
    (prefs_dir / "userprofile.xml").unlink()
    (prefs_dir / "com.alivecor.aliveecg_preferences.xml").unlink()
    prefs = android.parse_shared_prefs(prefs_dir, dump)
    assert [a.key for a in prefs.app_timestamps] == ["first_open_time"]
    assert all(not f.values for f in prefs.fragments)


def test_malformed_xml_skipped(tmp_path):
    dump = make_dump(tmp_path, "android", small_truth())
    (dump / ROOT / "shared_prefs/userprofile.xml").write_text("<map><string name='x'>", encoding="utf-8")
    case = extract("android", dump)
    assert case.warning_codes() == ["MalformedXml"]
    # the ECG rows still carry the patient name
    assert case.profile.first_name == "Test"


# --------------------------------------------------------------------------
# media

def test_audio_linked_by_uuid(tmp_path):
    dump = make_dump(tmp_path, "android", small_truth())
    case = extract("android", dump)
    e = next(e for e in case.ecgs if e.uuid == SAMPLE_UUID)
    assert e.audio_item.dump_relative_path == f"{ROOT}/files/{SAMPLE_UUID}.m4a"
    assert [i.dump_relative_path.rsplit("/", 1)[-1] for i in e.atc_items] == [f"{SAMPLE_UUID}.atc", f"{SAMPLE_UUID}_enhanced.atc"]
    pdfs = [i for i in case.items if i.category is Category.PDF_REFERRAL]
    assert [p.dump_relative_path for p in pdfs] == [f"{ROOT}/files/temp/{SAMPLE_UUID}.pdf"]
    assert (dump / pdfs[0].dump_relative_path).read_bytes().startswith(b"%PDF-")


def test_audio_substring_match(tmp_path):
    dump = make_dump(tmp_path, "android", small_truth())
    audio = dump / ROOT / "files" / f"{SAMPLE_UUID}.m4a"
    audio.rename(audio.with_name(f"voice_{SAMPLE_UUID}.aac"))
    case = extract("android", dump)
    assert case.warnings == []
    assert next(e for e in case.ecgs if e.uuid == SAMPLE_UUID).audio_item is not None


def test_orphan_and_missing_audio(tmp_path):
    dump = make_dump(tmp_path, "android", small_truth())
    audio = dump / ROOT / "files" / f"{SAMPLE_UUID}.m4a"
    audio.rename(audio.with_name("11111111-2222-4333-8444-555555555555.m4a"))
    case = extract("android", dump)
    assert sorted(case.warning_codes()) == ["MissingAudio", "OrphanAudio"]


def test_has_audio_mismatch(tmp_path):
    dump = make_dump(tmp_path, "android", small_truth())
    edit_db(dump, f"UPDATE ECG SET has_audio_file = 0 WHERE uuid = '{SAMPLE_UUID}'")
    case = extract("android", dump)
    assert case.warning_codes() == ["HasAudioMismatch"]


def test_twin_divergence(tmp_path):
    dump = make_dump(tmp_path, "android", small_truth())
    twin = dump / ROOT / "files/ecgs" / f"{SAMPLE_UUID}_enhanced.atc"
    data = bytearray(twin.read_bytes())
    data[-1] ^= 0xFF
    twin.write_bytes(bytes(data))
    case = extract("android", dump)
    assert case.warning_codes() == ["AtcDivergence"]


def test_orphan_and_missing_atc(tmp_path):
    dump = make_dump(tmp_path, "android", small_truth())
    ecgs = dump / ROOT / "files/ecgs"
    for f in ecgs.glob(f"{SAMPLE_UUID}*"):
        f.rename(f.with_name(f.name.replace(SAMPLE_UUID, "22222222-2222-4222-8222-222222222222")))
    case = extract("android", dump)
    codes = case.warning_codes()
    assert codes.count("OrphanAtc") == 2 and codes.count("MissingAtc") == 1


def test_extract_is_read_only(tmp_path):
    dump = make_dump(tmp_path, "android", fx.default_truth(5))
    before = tree_digests(dump)
    android.extract(dump)
    assert tree_digests(dump) == before
    assert not list(dump.rglob("*-journal")) and not list(dump.rglob("*-shm"))
