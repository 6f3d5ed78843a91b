import csv
import io
import json
import subprocess
import sys
from datetime import datetime, timezone

import jsonschema
import pytest

from alivecor_forensics import cli
from alivecor_forensics import fixtures as fx
from alivecor_forensics import report as rp
from helpers import extract, make_dump, tree_digests

PIN = "2024-01-01T00:00:00Z"


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def both_dump(tmp_path):
    out = tmp_path / "both"
    fx.gen_android_dump(fx.default_truth(), out)
    fx.gen_ios_dump(fx.default_truth(), out, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# report rendering

def test_fmt_decimal():
    assert rp.fmt_decimal(68.0388555) == "68.0388555"
    assert rp.fmt_decimal(182.880) == "182.88"
    assert rp.fmt_decimal(150.0) == "150"
    assert rp.fmt_decimal(1e-7) == "0.0000001"
    assert rp.fmt_decimal(548884559.115) == "548884559.115"


def test_case_id_stable_and_content_bound(tmp_path):
    case = extract("android", make_dump(tmp_path, "android"))
    assert rp.case_id(case.items) == rp.case_id(list(reversed(case.items)))
    assert rp.case_id(case.items).startswith("case-") and len(rp.case_id(case.items)) == 21
    assert rp.case_id(case.items[1:]) != rp.case_id(case.items)


def test_report_validates_against_schema(tmp_path, both_dump):
    cases = [extract("android", both_dump), extract("ios", both_dump)]
    doc = json.loads(rp.render_json(rp.build_report(cases, datetime(2024, 1, 1, tzinfo=timezone.utc))))
    jsonschema.Draft202012Validator(rp.load_schema()).validate(doc)
    assert doc["report_version"] == rp.REPORT_VERSION
    assert list(doc) == ["report_version", "tool_version", "case_id", "generated_at", "platforms", "cases",
                         "timeline", "findings", "evidence"]
    assert doc["generated_at"] == "2024-01-01T00:00:00.000Z"
    assert doc["platforms"] == ["Android", "Ios"]


def test_schema_rejects_unknown_keys(tmp_path):
    case = extract("ios", make_dump(tmp_path, "ios"))
    doc = json.loads(rp.render_json(rp.build_report([case], datetime(2024, 1, 1, tzinfo=timezone.utc))))
    doc["extra"] = 1
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate(doc, rp.load_schema())


def test_events_carry_utc_and_local(tmp_path):
    case = extract("android", make_dump(tmp_path, "android"))
    doc = json.loads(rp.render_json(rp.build_report([case], datetime(2024, 1, 1, tzinfo=timezone.utc))))
    ev = next(e for e in doc["timeline"]["events"] if e["kind"] == "BpRecorded")
    assert ev["utc"].endswith("Z") and ev["local"].endswith("-05:00")


# --------------------------------------------------------------------------
# scan

def test_scan_android(capsys, tmp_path):
    code, out, _ = run(capsys, "scan", make_dump(tmp_path, "android"), "--format", "json")
    doc = json.loads(out)
    assert code == 0 and [f["platform"] for f in doc["found"]] == ["Android"]
    assert doc["found"][0]["app_root"] == "data/data/com.alivecor.aliveecg"
    assert doc["found"][0]["files"]["AtcEcg"] == 22


def test_scan_ios_text(capsys, tmp_path):
    code, out, _ = run(capsys, "scan", make_dump(tmp_path, "ios"))
    assert code == 0 and out.startswith("Ios: private/var/mobile/containers/data/application/")


def test_scan_both(capsys, both_dump):
    code, out, _ = run(capsys, "scan", both_dump, "--format", "json")
    assert code == 0 and [f["platform"] for f in json.loads(out)["found"]] == ["Android", "Ios"]


def test_scan_empty(capsys, tmp_path):
    code, out, _ = run(capsys, "scan", tmp_path)
    assert code == 3 and "no Kardia" in out


def test_scan_missing_dir(capsys, tmp_path):
    code, out, err = run(capsys, "scan", tmp_path / "nope")
    assert code == 4 and out == "" and err.startswith("kardia-forensics:")


# --------------------------------------------------------------------------
# extract and timeline

def test_extract_clean(capsys, tmp_path):
    dump = make_dump(tmp_path, "android")
    before = tree_digests(dump)
    code, out, err = run(capsys, "extract", dump, "--paranoid", "--pin-time", PIN)
    doc = json.loads(out)
    assert code == 0 and err == ""
    assert len(doc["cases"][0]["ecgs"]) == 11
    assert not [f for f in doc["findings"] if f["severity"] == "Anomaly"]
    assert tree_digests(dump) == before


@pytest.mark.parametrize("mutation", ["clock-skew", "drop-table", "orphan-audio"])
def test_extract_mutated(capsys, tmp_path, mutation):
    dump = make_dump(tmp_path, "ios", mutation=mutation)
    code, out, err = run(capsys, "extract", dump, "--pin-time", PIN)
    doc = json.loads(out)
    expected = fx.EXPECTED_CODE[fx.Mutation(mutation)]
    # warnings never change the exit code
    assert code == 0
    assert [w["code"] for w in doc["cases"][0]["warnings"]] == [expected]
    assert f"warning: {expected}" in err


def test_extract_deterministic(capsys, both_dump, tmp_path):
    outs = []
    for n in range(2):
        target = tmp_path / f"r{n}.json"
        code, _, _ = run(capsys, "extract", both_dump, "--pin-time", PIN, "--out", target)
        assert code == 0
        outs.append(target.read_bytes())
    assert outs[0] == outs[1]


def test_extract_missing_app(capsys, tmp_path):
    code, out, err = run(capsys, "extract", tmp_path)
    assert code == 3 and out == "" and "no Kardia" in err


def test_extract_nonexistent_dump(capsys, tmp_path):
    code, _, _ = run(capsys, "extract", tmp_path / "missing")
    assert code == 4


def test_bad_pin_time(capsys, tmp_path):
    code, _, err = run(capsys, "extract", make_dump(tmp_path, "android"), "--pin-time", "noon")
    assert code == 2 and "--pin-time" in err


def test_unwritable_out(capsys, tmp_path):
    code, _, _ = run(capsys, "extract", make_dump(tmp_path, "android"), "--out", tmp_path / "no/such/dir/r.json")
    assert code == 4


def test_csv_timeline(capsys, tmp_path):
    dump = make_dump(tmp_path, "android")
    code, out, _ = run(capsys, "timeline", dump, "--format", "csv")
    assert code == 0
    assert "\r\n" in out
    rows = list(csv.reader(io.StringIO(out, newline="")))
    assert tuple(rows[0]) == rp.CSV_COLUMNS
    n_events = len(json.loads(run(capsys, "timeline", dump, "--format", "json")[1])["events"])
    assert len(rows) - 1 == n_events
    assert sum(r[2] == "EcgRecorded" for r in rows) == 11


def test_csv_quoting(capsys, tmp_path):
    truth = fx.default_truth()
    truth.profile.first_name = 'Ann "Nan", Jr'
    dump = make_dump(tmp_path, "android", truth)
    _, out, _ = run(capsys, "extract", dump, "--format", "csv")
    assert '"Ann ""Nan"", Jr Patient"' in out
    rows = list(csv.reader(io.StringIO(out, newline="")))
    assert all(len(r) == len(rp.CSV_COLUMNS) for r in rows)
    assert rows[1][4] == 'Ann "Nan", Jr Patient'


def test_text_timeline(capsys, tmp_path):
    code, out, _ = run(capsys, "timeline", make_dump(tmp_path, "ios"))
    assert code == 0 and out.startswith("Timeline (")
    assert "Findings" not in out
    assert out.count("EcgRecorded") == 11


def test_text_report(capsys, tmp_path):
    code, out, _ = run(capsys, "extract", make_dump(tmp_path, "android"), "--format", "text")
    assert code == 0
    assert "patient: Test Patient, born 1980-01-01" in out
    assert "ImperialWeightInput" in out


# --------------------------------------------------------------------------
# verify

def test_verify_roundtrip(capsys, tmp_path):
    dump = make_dump(tmp_path, "android")
    report = tmp_path / "r.json"
    run(capsys, "extract", dump, "--out", report)
    code, out, _ = run(capsys, "verify", report, dump)
    assert code == 0 and out.startswith("ok:")
    code, out, _ = run(capsys, "verify", dump / "MANIFEST-android.txt", dump)
    assert code == 0


def test_verify_flipped_byte(capsys, tmp_path):
    dump = make_dump(tmp_path, "ios")
    report = tmp_path / "r.json"
    run(capsys, "extract", dump, "--out", report)
    target = next(dump.rglob("*.atc"))
    data = bytearray(target.read_bytes())
    data[100] ^= 1
    target.write_bytes(bytes(data))
    code, out, err = run(capsys, "verify", report, dump)
    rel = target.relative_to(dump).as_posix()
    assert code == 5
    assert out.splitlines() == [f"MODIFIED  {rel}"]
    assert "1 of" in err


def test_verify_missing_file(capsys, tmp_path):
    dump = make_dump(tmp_path, "android")
    target = next(dump.rglob("*.m4a"))
    target.unlink()
    code, out, _ = run(capsys, "verify", dump / "MANIFEST-android.txt", dump)
    assert code == 5 and out.splitlines() == [f"ABSENT    {target.relative_to(dump).as_posix()}"]


def test_verify_bad_manifest(capsys, tmp_path):
    bad = tmp_path / "m.txt"
    bad.write_text("not a manifest line\n")
    code, _, _ = run(capsys, "verify", bad, tmp_path)
    assert code == 2


# --------------------------------------------------------------------------
# gen-fixture

def test_gen_fixture_default(capsys, tmp_path):
    code, out, _ = run(capsys, "gen-fixture", "--out", tmp_path / "d", "--platform", "both")
    assert code == 0
    paths = [line.split("  ")[2] for line in out.splitlines()]
    assert any(p.endswith("databases/ECG.db") for p in paths)
    assert any(p.endswith("AliveECGDB.sqlite") for p in paths)
    code, out, _ = run(capsys, "extract", tmp_path / "d", "--pin-time", PIN)
    assert [len(c["ecgs"]) for c in json.loads(out)["cases"]] == [11, 11]


def test_gen_fixture_spec_and_seed(capsys, tmp_path):
    spec = tmp_path / "truth.yaml"
    spec.write_text("scenario: random\nseed: 5\nios:\n  plist_encoding: binary\n", encoding="utf-8")
    code, out_a, _ = run(capsys, "gen-fixture", spec, "--out", tmp_path / "a", "--platform", "ios")
    code_b, out_b, _ = run(capsys, "gen-fixture", spec, "--out", tmp_path / "b", "--platform", "ios")
    assert code == code_b == 0 and out_a == out_b
    assert tree_digests(tmp_path / "a") == tree_digests(tmp_path / "b")


def test_gen_fixture_bad_spec(capsys, tmp_path):
    spec = tmp_path / "truth.yaml"
    spec.write_text("scenario: default\nprofile:\n  nme: x\n", encoding="utf-8")
    code, out, err = run(capsys, "gen-fixture", spec, "--out", tmp_path / "d")
    assert code == 2 and out == ""
    assert "line 3" in err and "nme" in err


def test_gen_fixture_mutate(capsys, tmp_path):
    code, _, err = run(capsys, "gen-fixture", "--out", tmp_path / "d", "--mutate", "clock-skew")
    assert code == 0 and err
    code, out, _ = run(capsys, "extract", tmp_path / "d")
    assert {w["code"] for w in json.loads(out)["cases"][0]["warnings"]} == {"ClockSkew"}
    # the manifest records the dump as generated, so the mutation is detectable
    code, _, _ = run(capsys, "verify", tmp_path / "d/MANIFEST-android.txt", tmp_path / "d")
    assert code == 5


def test_gen_fixture_nonempty_out(capsys, tmp_path):
    (tmp_path / "x").write_text("keep me")
    code, _, _ = run(capsys, "gen-fixture", "--out", tmp_path)
    assert code == 4
    assert (tmp_path / "x").read_text() == "keep me"


def test_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["frobnicate"])
    assert info.value.code == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "alivecor_forensics", "scan", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 3
