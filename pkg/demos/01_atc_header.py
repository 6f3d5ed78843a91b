"""Walk through the .atc container header byte by byte."""

import struct

from alivecor_forensics import atc
from alivecor_forensics.evidence import format_utc, to_local

UUID = "3db73498-32a0-4293-b5f0-7616162c55d8"
WHEN = "2018-05-24T14:55:59.115-05:00"

# Build a header the way the app lays it out: magic, version, then an info chunk.
payload = atc.build_info_payload(WHEN, UUID, length=atc.INFO_CHUNK_LENGTH)
data = atc.serialize_atc(atc.AtcFile(chunks=(atc.AtcChunk.make("info", payload),)))

for row in range(0, 0x60, 16):
    chunk = data[row:row + 16]
    text = "".join(chr(b) if 32 <= b < 127 else "." for b in chunk)
    print(f"{row:04X}  {chunk.hex(' ').upper():<47}  {text}")

# The fixed fields sit at known offsets.
magic, version = data[:8], struct.unpack_from("<I", data, 8)[0]
print("\nmagic", magic, "version", version)

f = atc.parse_atc(data)
info = f.info
print("chunk", f.chunks[0].name, "length", f.chunks[0].length)
print("recorded (as written):", info.recorded_at_text)
print("recorded (UTC):       ", format_utc(info.recorded_at.utc))
print("recorded (local):     ", to_local(info.recorded_at))
print("uuid:", info.uuid_text, "valid" if info.uuid_valid else "INVALID")

# A truncated copy still parses; the damaged tail is kept for the examiner.
cut = atc.parse_atc(data[:150])
print("\ntruncated file warnings:", [w.code for w in cut.warnings], "tail bytes:", len(cut.truncated_tail))
assert atc.serialize_atc(cut) == data[:150]
