import random
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alivecor_forensics import atc
from alivecor_forensics.errors import AtcError, BadMagic, LengthMismatch, NotInfoChunk, TruncatedPreamble
from alivecor_forensics.fixtures import atc_bytes, default_truth

SAMPLE_UUID = "3db73498-32a0-4293-b5f0-7616162c55d8"
SAMPLE_TIME = "2018-05-24T14:55:59.115-05:00"


def test_sample_header_layout(sample_header):
    f = atc.parse_atc(sample_header)
    assert f.magic == b"ALIVE\0\0\0" and f.magic.rstrip(b"\0") == b"ALIVE"
    assert f.format_version == 3
    assert [(c.name, c.length) for c in f.chunks] == [("info", 264)]
    assert f.warnings == () and f.truncated_tail == b""
    info = f.info
    assert info.recorded_at_text == SAMPLE_TIME
    assert info.uuid_text == SAMPLE_UUID and info.uuid_valid
    assert info.recorder_info == () and info.warnings == ()
    assert info.recorded_at.offset_seconds == -18000


def test_sample_header_absolute_offsets(sample_header):
    assert sample_header[0x14:0x14 + len(SAMPLE_TIME)] == SAMPLE_TIME.encode()
    assert sample_header[0x34:0x34 + 36] == SAMPLE_UUID.encode()
    assert sample_header[0x10:0x14] == b"\x08\x01\x00\x00"


def test_sample_header_round_trip(sample_header):
    assert atc.serialize_atc(atc.parse_atc(sample_header)) == sample_header


def test_minimal_file():
    f = atc.parse_atc(b"ALIVE\0\0\0" + struct.pack("<I", 3))
    assert f.chunks == () and f.warnings == ()
    assert atc.serialize_atc(atc.AtcFile()) == b"ALIVE\0\0\0\x03\0\0\0"


def test_bad_magic(sample_header):
    with pytest.raises(BadMagic):
        atc.parse_atc(b"B" + sample_header[1:])


def test_truncated_preamble():
    with pytest.raises(TruncatedPreamble):
        atc.parse_atc(b"ALIVE\0\0\0\x03")


def test_unexpected_version_warns(sample_header):
    f = atc.parse_atc(sample_header[:8] + struct.pack("<I", 4) + sample_header[12:])
    assert [w.code for w in f.warnings] == ["UnexpectedVersion"]
    assert f.format_version == 4


def test_truncation_salvages_tail(sample_header):
    cut = sample_header[:200]
    f = atc.parse_atc(cut)
    assert f.chunks == ()
    assert [w.code for w in f.warnings] == ["Truncation"]
    assert f.truncated_tail == cut[12:]
    assert atc.serialize_atc(f) == cut


def test_partial_chunk_header(sample_header):
    f = atc.parse_atc(sample_header + b"ecg")
    assert len(f.chunks) == 1 and f.truncated_tail == b"ecg"
    assert f.warnings[0].code == "Truncation"


def test_unknown_chunks_preserved(sample_header):
    extra = b"zzzz" + struct.pack("<I", 3) + b"\x01\x02\x03"
    f = atc.parse_atc(sample_header + extra)
    assert f.chunk("zzzz").payload == b"\x01\x02\x03"
    assert atc.serialize_atc(f) == sample_header + extra


def test_all_nul_info():
    info = atc.parse_info_chunk(atc.AtcChunk.make("info", bytes(264)))
    codes = [w.code for w in info.warnings]
    assert codes == ["EmptyDatetime", "EmptyUuid"]
    assert info.recorder_info == () and info.recorded_at is None


def test_not_info_chunk():
    with pytest.raises(NotInfoChunk):
        atc.parse_info_chunk(atc.AtcChunk.make("ecg ", b""))


def test_recorder_strings_from_generator():
    f = atc.parse_atc(atc_bytes(SAMPLE_UUID, default_truth().ecg_events[0].recorded_at, -18000, "Galaxy S4|Kardia 5.1.2"))
    assert f.info.recorder_info == ("Galaxy S4", "Kardia 5.1.2")
    assert f.info.uuid_text == SAMPLE_UUID


def test_bad_fields_downgrade_to_warnings():
    payload = atc.build_info_payload("2018-13-45T99:00:00Z", "not-a-uuid")
    info = atc.parse_info_chunk(atc.AtcChunk.make("info", payload))
    assert [w.code for w in info.warnings] == ["BadDatetime", "BadUuid"]
    assert info.raw == payload and info.recorded_at is None and not info.uuid_valid


def test_short_info_uses_fallback():
    payload = SAMPLE_TIME.encode() + b"\0" + SAMPLE_UUID.encode() + b"\0iPhone SE\0"
    info = atc.parse_info_chunk(atc.AtcChunk.make("info", payload))
    assert info.warnings[0].code == "InfoLayoutFallback"
    assert (info.recorded_at_text, info.uuid_text, info.recorder_info) == (SAMPLE_TIME, SAMPLE_UUID, ("iPhone SE",))


def test_trailing_raw_kept():
    payload = atc.build_info_payload(SAMPLE_TIME, SAMPLE_UUID, ("a",), length=264)
    payload = payload[:-3] + b"xyz"
    info = atc.parse_info_chunk(atc.AtcChunk.make("info", payload))
    assert info.trailing_raw == b"xyz"


def test_serialize_length_mismatch():
    with pytest.raises(LengthMismatch):
        atc.serialize_atc(atc.AtcFile(chunks=(atc.AtcChunk(b"info", 5, b"abc"),)))
    with pytest.raises(LengthMismatch):
        atc.serialize_atc(atc.AtcFile(chunks=(atc.AtcChunk.make(b"toolong", b""),)))
    with pytest.raises(LengthMismatch):
        atc.build_info_payload("x" * 40, SAMPLE_UUID)


chunk_st = st.builds(
    atc.AtcChunk.make,
    st.binary(min_size=4, max_size=4),
    st.binary(max_size=300),
)


@settings(max_examples=1000, deadline=None)
@given(version=st.integers(0, 2**32 - 1), chunks=st.lists(chunk_st, max_size=5))
def test_generated_files_round_trip(version, chunks):
    f = atc.AtcFile(format_version=version, chunks=tuple(chunks))
    data = atc.serialize_atc(f)
    assert atc.parse_atc(data) == f
    assert atc.serialize_atc(atc.parse_atc(data)) == data


def test_every_truncation_point(sample_header):
    data = atc_bytes(SAMPLE_UUID, default_truth().ecg_events[0].recorded_at, -18000, "Galaxy S4|Kardia 5.1.2")
    for n in range(len(data) + 1):
        try:
            f = atc.parse_atc(data[:n])
        except AtcError:
            assert n < 12
            continue
        assert atc.serialize_atc(f) == data[:n]
        if n < len(data):
            assert any(w.code == "Truncation" for w in f.warnings) or n in (12, 20 + 264)


def test_random_bytes_never_crash():
    rng = random.Random(11)
    for _ in range(500):
        data = b"ALIVE\0\0\0" + bytes(rng.randrange(256) for _ in range(rng.randrange(4, 80)))
        f = atc.parse_atc(data)
        assert atc.serialize_atc(f) == data
