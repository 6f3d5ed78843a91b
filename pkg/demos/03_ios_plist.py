"""iOS preferences: the same plist in XML and binary form, and Mac absolute time."""

import plistlib
import tempfile
from pathlib import Path

from alivecor_forensics import fixtures as fx
from alivecor_forensics import ios
from alivecor_forensics.evidence import format_utc

# Mac absolute time counts seconds from 2001-01-01T00:00:00Z.
ts = ios.mac_time(548884559.115, "demo#ZDATERECORDED", ios.PlistContents())
print("548884559.115 ->", format_utc(ts.utc))

truth = fx.default_truth()
with tempfile.TemporaryDirectory() as tmp:
    for encoding in ("xml", "binary"):
        truth.ios.plist_encoding = encoding
        dump = Path(tmp) / encoding
        fx.gen_ios_dump(truth, dump)
        plist = next(dump.rglob("com.alivecor.professional.aliveecg.plist"))
        head = plist.read_bytes()[:8]
        parsed = ios.parse_prefs_plist(plist)
        print(f"\n{encoding}: starts with {head!r}")
        for key, value in parsed.fragment.values.items():
            shown = format_utc(value.utc) if hasattr(value, "utc") else value
            print(f"  {key:<20} {shown}")
        print("  app:", parsed.app_metadata, [(a.key, format_utc(a.timestamp.utc)) for a in parsed.app_timestamps])

    # the raw document, as a plist editor would show it
    print("\nkeys on disk:", sorted(plistlib.loads(plist.read_bytes())))

    case = ios.extract(dump)
    e = case.ecgs[0]
    print(f"\nfirst ECG {e.uuid}: {format_utc(e.recorded_at.utc)}, header offset {e.recorded_at.offset_seconds} s,"
          f" audio {e.audio_item.dump_relative_path if e.audio_item else None}")
