"""Domain types shared platform-wide: tag naming, value kinds, time bucketing,
and the binary rowkey/cell codec the storage files depend on.

The byte layouts defined here are frozen; see docs/storage.md.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from typing import Final

MAX_PATH_SEGMENTS: Final[int] = 4
MAX_TEXT_VALUE_BYTES: Final[int] = 256
ROWKEY_BYTES: Final[int] = 12

_ROWKEY = struct.Struct(">IQ")
_CELL_HEADER = struct.Struct(">IBBH")  # offset_ms, kind, status, value length


class MalformedTag(ValueError):
    """Raised when a tag string or its components violate the naming rules."""


class BadKeyLength(ValueError):
    pass


class BadValue(ValueError):
    """Value payload does not match its declared kind (or exceeds limits)."""


class Resolution(Enum):
    """Fixed-width UTC-aligned bucket sizes for the aggregation tables."""

    MINUTE = 60_000
    HOUR = 3_600_000
    DAY = 86_400_000

    @property
    def width_ms(self) -> int:
        return self.value

    @classmethod
    def from_name(cls, name: str) -> "Resolution":
        try:
            return _RESOLUTION_NAMES[name.lower()]
        except KeyError:
            raise ValueError(f"unknown resolution {name!r}") from None


_RESOLUTION_NAMES: Final[dict[str, Resolution]] = {
    "min": Resolution.MINUTE,
    "minute": Resolution.MINUTE,
    "hour": Resolution.HOUR,
    "day": Resolution.DAY,
}

# Value kind tag bytes, also used in cell encodings on disk.
VALUE_KINDS: Final[dict[str, int]] = {"F": 0x46, "I": 0x49, "B": 0x42, "S": 0x53}
_KIND_BY_BYTE: Final[dict[int, str]] = {b: k for k, b in VALUE_KINDS.items()}


@dataclass(frozen=True, slots=True)
class TagName:
    """Hierarchical plant-resource identifier: ``zone::seg1/.../segN``.

    ``zone`` and each path segment are non-empty and contain neither ``/``
    nor ``::``; the path holds 1..4 segments, the last one naming the
    measured value (or ``Health``).
    """

    zone: str
    path: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.zone or "::" in self.zone or "/" in self.zone:
            raise MalformedTag(f"bad zone {self.zone!r}")
        if not 1 <= len(self.path) <= MAX_PATH_SEGMENTS:
            raise MalformedTag(f"path must have 1..{MAX_PATH_SEGMENTS} segments")
        for seg in self.path:
            if not seg or "::" in seg or "/" in seg:
                raise MalformedTag(f"bad path segment {seg!r}")

    def __str__(self) -> str:
        return format_tag(self)


def parse_tag(text: str) -> TagName:
    """Parse ``zone::seg1/.../segN`` into a TagName.

    Formatting the result reproduces the input exactly.
    """
    zone, sep, rest = text.partition("::")
    if not sep:
        raise MalformedTag(f"missing '::' separator in {text!r}")
    return TagName(zone=zone, path=tuple(rest.split("/")))


def format_tag(tag: TagName) -> str:
    return f"{tag.zone}::{'/'.join(tag.path)}"


def check_value(kind: str, value: object) -> None:
    """Validate a payload against its declared kind; raises BadValue."""
    if kind == "F":
        if not isinstance(value, (float, int)) or isinstance(value, bool):
            raise BadValue(f"kind F expects a number, got {type(value).__name__}")
    elif kind == "I":
        if not isinstance(value, int) or isinstance(value, bool):
            raise BadValue(f"kind I expects an integer, got {type(value).__name__}")
    elif kind == "B":
        if not isinstance(value, bool):
            raise BadValue(f"kind B expects a boolean, got {type(value).__name__}")
    elif kind == "S":
        if not isinstance(value, str):
            raise BadValue(f"kind S expects text, got {type(value).__name__}")
        if len(value.encode("utf-8")) > MAX_TEXT_VALUE_BYTES:
            raise BadValue(f"text value exceeds {MAX_TEXT_VALUE_BYTES} bytes")
    else:
        raise BadValue(f"unknown value kind {kind!r}")


def bucket_of(ts_ms: int, res: Resolution) -> int:
    """Largest multiple of the resolution width that is <= ts_ms."""
    width = res.value
    return (ts_ms // width) * width


def encode_rowkey(tag_id: int, ts_ms: int) -> bytes:
    """12-byte storage key: BE32 tag id followed by BE64 hour-bucket start.

    Lexicographic byte order equals (tag_id, bucket_start) ascending order.
    """
    return _ROWKEY.pack(tag_id, bucket_of(ts_ms, Resolution.HOUR))


def encode_rowkey_aligned(tag_id: int, bucket_start_ms: int) -> bytes:
    """Rowkey for an already-aligned bucket start (aggregation tables)."""
    return _ROWKEY.pack(tag_id, bucket_start_ms)


def decode_rowkey(key: bytes) -> tuple[int, int]:
    if len(key) != ROWKEY_BYTES:
        raise BadKeyLength(f"rowkey must be {ROWKEY_BYTES} bytes, got {len(key)}")
    tag_id, bucket_start = _ROWKEY.unpack(key)
    return tag_id, bucket_start


def encode_cell(offset_ms: int, kind: str, status: int, value: object) -> bytes:
    """Cell encoding within a raw row: BE32 offset, kind byte, status byte,
    BE16 payload length, payload. Offset leads so byte order equals
    timestamp order within the row.
    """
    if kind == "F":
        payload = struct.pack(">d", float(value))
    elif kind == "I":
        payload = struct.pack(">q", int(value))
    elif kind == "B":
        payload = b"\x01" if value else b"\x00"
    else:
        payload = str(value).encode("utf-8")
    return _CELL_HEADER.pack(offset_ms, VALUE_KINDS[kind], status & 0xFF, len(payload)) + payload


def decode_cell(buf: bytes, pos: int = 0) -> tuple[int, str, int, object, int]:
    """Inverse of encode_cell; returns (offset_ms, kind, status, value, next_pos)."""
    offset_ms, kind_byte, status, length = _CELL_HEADER.unpack_from(buf, pos)
    pos += _CELL_HEADER.size
    payload = buf[pos : pos + length]
    kind = _KIND_BY_BYTE[kind_byte]
    value: object
    if kind == "F":
        value = struct.unpack(">d", payload)[0]
    elif kind == "I":
        value = struct.unpack(">q", payload)[0]
    elif kind == "B":
        value = payload == b"\x01"
    else:
        value = payload.decode("utf-8")
    return offset_ms, kind, status, value, pos + length
