"""Merge Android and iOS extractions into one timeline and a verifiable report."""

import json
import tempfile
from datetime import datetime, timezone
from pathlib import Path

from alivecor_forensics import android, ios
from alivecor_forensics import fixtures as fx
from alivecor_forensics import report as rp
from alivecor_forensics.timeline import EventKind, build_timeline

truth = fx.default_truth()
with tempfile.TemporaryDirectory() as tmp:
    dump = Path(tmp) / "dump"
    fx.gen_android_dump(truth, dump)
    fx.gen_ios_dump(truth, dump, exist_ok=True)
    cases = [android.extract(dump), ios.extract(dump)]

    tl = build_timeline(*cases)
    print(f"{len(tl)} events, {len(tl.quarantined)} quarantined")
    for e in tl.events[:8]:
        print(f"  {e.utc.isoformat(timespec='milliseconds')}  {e.local or '':<30} {e.platform.value:<8}"
              f" {e.kind.value:<15} {e.summary}")

    # the same recording seen from both phones lands on the same instant
    rec = tl.of_kind(EventKind.ECG_RECORDED)
    print("ECG instants agree across platforms:",
          all(a.utc == b.utc for a, b in zip(rec[::2], rec[1::2])))

    r = rp.build_report(cases, datetime(2024, 1, 1, tzinfo=timezone.utc))
    text = rp.render_json(r)
    print("\nreport", r.case_id, f"{len(text)} bytes,", len(json.loads(text)["evidence"]), "evidence items")
    print(rp.render_csv(r).splitlines()[0])
    print("\n".join(rp.manifest_lines(cases[0].items)[:3]))
