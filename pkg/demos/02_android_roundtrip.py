"""Generate a synthetic Android dump, extract it, and compare with the ground truth."""

import tempfile
from pathlib import Path

from alivecor_forensics import android
from alivecor_forensics import fixtures as fx
from alivecor_forensics.evidence import format_utc
from alivecor_forensics.timeline import Severity, check_consistency

truth = fx.default_truth(seed=1)
print(f"ground truth: {len(truth.ecg_events)} ECGs, {len(truth.bp_events)} BP, {len(truth.weight_events)} weights")

with tempfile.TemporaryDirectory() as tmp:
    dump = Path(tmp) / "dump"
    manifest = fx.gen_android_dump(truth, dump)
    print(f"wrote {len(manifest)} files, e.g. {manifest[0][2]}")

    case = android.extract(dump)
    print("app root:", case.app_root)
    print("tables:", len(case.table_census), "opaque:", ", ".join(case.opaque_tables))
    print("patient:", case.profile.first_name, case.profile.last_name, "weight", case.profile.weight_kg, "kg")

    # every recording comes back at the same instant, to the millisecond
    by_uuid = {e.uuid: e for e in case.ecgs}
    for ev in truth.ecg_events[:3]:
        got = by_uuid[ev.uuid]
        print(f"  {ev.uuid}  truth {format_utc(ev.recorded_at)}  extracted {format_utc(got.recorded_at.utc)}"
              f"  atc files {len(got.atc_items)}  audio {'yes' if got.audio_item else 'no'}")

    for f in check_consistency(case):
        print(f"{f.severity.value:>7} {f.code}: {f.description}")

    # corrupt one header clock and look again
    print("\nmutation:", fx.mutate_dump(dump, "clock-skew"))
    case = android.extract(dump)
    print("anomalies:", sorted({f.code for f in check_consistency(case) if f.severity is Severity.ANOMALY}))
