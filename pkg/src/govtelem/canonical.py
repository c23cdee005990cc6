"""Canonical wire form for telemetry events.

Signatures need bytes that are identical for identical events on every
platform and process, so the encoding is fully pinned:

* magic ``GTE1`` then fields in fixed order: timestamp, source, receiver,
  operation, context, governance, nonce.
* strings are UTF-8 with a big-endian u32 length prefix.
* integers are 8-byte big-endian (two's complement for context values,
  unsigned for the nonce).
* reals are the shortest decimal string that round-trips to the same IEEE
  double, length-prefixed like any string.  Non-finite reals are an error.
* context entries are sorted by key; each value carries a one-byte type tag
  (S, I or F).
* governance enums encode as their uppercase names; lineage as a counted
  list of strings.

The signature and the verification state are excluded: the verifier sets
``verified`` after checking the signature, so including either would
invalidate the signature it is meant to check.  ``parse_canonical``
therefore returns an event with an empty signature and UNKNOWN verification.
"""

from __future__ import annotations

import hashlib
import math
import struct

from .errors import SerializationError
from .model import (
    Classification,
    GovernanceMetadata,
    GovernanceTelemetryEvent,
    Jurisdiction,
    Sensitivity,
    Verified,
)

MAGIC = b"GTE1"

_TAG_STR = b"S"
_TAG_INT = b"I"
_TAG_FLOAT = b"F"

_I64_MIN = -(2**63)
_I64_MAX = 2**63 - 1


def _w_str(out: bytearray, text: str) -> None:
    data = text.encode("utf-8")
    out += struct.pack(">I", len(data))
    out += data


def _w_float(out: bytearray, value: float) -> None:
    if math.isnan(value) or math.isinf(value):
        raise SerializationError(f"non-finite real cannot be serialized: {value!r}")
    _w_str(out, repr(float(value)))


def canonical_serialize(event: GovernanceTelemetryEvent) -> bytes:
    """Deterministic byte encoding of the signable portion of an event."""
    out = bytearray(MAGIC)
    _w_float(out, event.timestamp)
    _w_str(out, event.source)
    _w_str(out, event.receiver)
    _w_str(out, event.operation)

    keys = sorted(event.context)
    out += struct.pack(">I", len(keys))
    for key in keys:
        _w_str(out, key)
        value = event.context[key]
        if isinstance(value, bool):
            raise SerializationError(f"context[{key!r}] is a boolean")
        if isinstance(value, str):
            out += _TAG_STR
            _w_str(out, value)
        elif isinstance(value, int):
            if not _I64_MIN <= value <= _I64_MAX:
                raise SerializationError(f"context[{key!r}] outside 64-bit range")
            out += _TAG_INT
            out += struct.pack(">q", value)
        elif isinstance(value, float):
            out += _TAG_FLOAT
            _w_float(out, value)
        else:
            raise SerializationError(
                f"context[{key!r}] has unsupported type {type(value).__name__}"
            )

    gov = event.governance
    _w_str(out, gov.classification.value)
    _w_str(out, gov.jurisdiction.value)
    _w_str(out, gov.sensitivity.value)
    out += struct.pack(">I", len(gov.lineage))
    for agent in gov.lineage:
        _w_str(out, agent)

    out += struct.pack(">Q", event.nonce)
    return bytes(out)


def event_digest(event: GovernanceTelemetryEvent) -> bytes:
    """SHA-256 over the canonical form; the event's identity everywhere else."""
    return hashlib.sha256(canonical_serialize(event)).digest()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise SerializationError("truncated canonical event")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def r_u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def r_str(self) -> str:
        return self.take(self.r_u32()).decode("utf-8")

    def r_float(self) -> float:
        return float(self.r_str())


def parse_canonical(data: bytes) -> GovernanceTelemetryEvent:
    """Inverse of canonical_serialize; verified comes back UNKNOWN, signature empty."""
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise SerializationError("bad magic; not a canonical event")
    timestamp = r.r_float()
    source = r.r_str()
    receiver = r.r_str()
    operation = r.r_str()

    context: dict[str, str | int | float] = {}
    for _ in range(r.r_u32()):
        key = r.r_str()
        tag = r.take(1)
        if tag == _TAG_STR:
            context[key] = r.r_str()
        elif tag == _TAG_INT:
            context[key] = struct.unpack(">q", r.take(8))[0]
        elif tag == _TAG_FLOAT:
            context[key] = r.r_float()
        else:
            raise SerializationError(f"unknown context value tag {tag!r}")

    classification = Classification(r.r_str())
    jurisdiction = Jurisdiction(r.r_str())
    sensitivity = Sensitivity(r.r_str())
    lineage = tuple(r.r_str() for _ in range(r.r_u32()))
    nonce = struct.unpack(">Q", r.take(8))[0]
    if r.pos != len(data):
        raise SerializationError("trailing bytes after canonical event")

    return GovernanceTelemetryEvent(
        timestamp=timestamp,
        source=source,
        receiver=receiver,
        operation=operation,
        context=context,
        governance=GovernanceMetadata(
            classification=classification,
            jurisdiction=jurisdiction,
            sensitivity=sensitivity,
            lineage=lineage,
            verified=Verified.UNKNOWN,
        ),
        nonce=nonce,
        signature=None,
    )
