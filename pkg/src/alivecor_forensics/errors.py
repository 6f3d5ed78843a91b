"""Exception hierarchy.

Fatal conditions raise; recoverable oddities found in evidence are recorded as
:class:`~alivecor_forensics.evidence.Anomaly` entries instead.
"""

from __future__ import annotations


class ForensicError(Exception):
    """Base class for every error raised by this package."""


# timestamps / units
class UnparseableRaw(ForensicError, ValueError):
    pass


class UnknownEncoding(ForensicError, ValueError):
    pass


class MissingOffset(ForensicError, ValueError):
    """The record carries no zone information; only UTC may be reported."""


class UnsupportedUnitPair(ForensicError, ValueError):
    pass


class NegativeValue(ForensicError, ValueError):
    pass


# .atc container
class AtcError(ForensicError, ValueError):
    pass


class BadMagic(AtcError):
    pass


class TruncatedPreamble(AtcError):
    pass


class NotInfoChunk(AtcError):
    pass


class LengthMismatch(AtcError):
    pass


# extraction
class AppNotFound(ForensicError, LookupError):
    pass


class NotADatabase(ForensicError):
    pass


class MalformedPlist(ForensicError):
    pass


# fixture generation
class OutDirNotEmpty(ForensicError):
    pass


class UnwritableTarget(ForensicError, OSError):
    pass


class TruthSpecError(ForensicError, ValueError):
    """A ground-truth document failed to load; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
