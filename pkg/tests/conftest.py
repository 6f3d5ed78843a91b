import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import ACCEPTANCE_LINES, READONLY_LOG  # noqa: E402

# Android .atc header as shown by a hex viewer; rows end at 0x5F and the
# remainder of the 264-byte info chunk is zero fill.
SAMPLE_HEADER_ROWS = """
41 4C 49 56 45 00 00 00 03 00 00 00 69 6E 66 6F
08 01 00 00 32 30 31 38 2D 30 35 2D 32 34 54 31
34 3A 35 35 3A 35 39 2E 31 31 35 2D 30 35 3A 30
30 00 00 00 33 64 62 37 33 34 39 38 2D 33 32 61
30 2D 34 32 39 33 2D 62 35 66 30 2D 37 36 31 36
31 36 32 63 35 35 64 38 00 00 00 00 00 00 00
"""
SAMPLE_HEADER = bytes.fromhex(SAMPLE_HEADER_ROWS).ljust(20 + 264, b"\x00")


@pytest.fixture
def sample_header() -> bytes:
    return SAMPLE_HEADER


def pytest_terminal_summary(terminalreporter):
    if READONLY_LOG["extractions"]:
        terminalreporter.write_line(
            f"read-only guard: {READONLY_LOG['extractions']} extractions, {len(READONLY_LOG['violations'])} violations"
        )
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
