"""Wire codec for the streaming API.

Requests are single JSON objects carried in length-prefixed frames:

    flag (1 byte: 0x00 raw, 0x01 deflate) | BE32 payload length | payload

The JSON body is capped at 1 MiB; a deflate payload may exceed the body cap
by a small slack because deflate can expand incompressible input. The full
contract is documented in docs/protocol.md.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field

from .model import check_value

FLAG_RAW = 0x00
FLAG_DEFLATE = 0x01
MAX_BODY_BYTES = 1_048_576
MAX_PAYLOAD_BYTES = MAX_BODY_BYTES + 4_096
HEADER_BYTES = 5

_VALID_KINDS = ("F", "I", "B", "S")


class WireError(ValueError):
    pass


class BadJson(WireError):
    pass


class UnknownType(WireError):
    pass


class MissingField(WireError):
    pass


class WrongValueKind(WireError):
    pass


class BodyTooLarge(WireError):
    pass


class BadFlag(WireError):
    pass


class CorruptDeflate(WireError):
    pass


class Truncated(Exception):
    """Partial frame: retry once more bytes have arrived."""


@dataclass(frozen=True, slots=True)
class StreamDefinition:
    stream_id: int
    tag: str
    value_kind: str
    encoding: str = "none"


@dataclass(frozen=True, slots=True)
class DataRecord:
    stream_id: int
    time_ms: int
    value: object
    status: int = 0


def encode_request(req: StreamDefinition | DataRecord) -> str:
    if isinstance(req, StreamDefinition):
        parameter: dict[str, object] = {
            "id": req.stream_id,
            "tag": req.tag,
            "type": req.value_kind,
        }
        if req.encoding != "none":
            parameter["enc"] = req.encoding
        return json.dumps({"type": "D", "parameter": parameter}, separators=(",", ":"))
    return json.dumps(
        {
            "type": "d",
            "parameter": {
                "id": req.stream_id,
                "time": req.time_ms,
                "value": req.value,
                "status": req.status,
            },
        },
        separators=(",", ":"),
    )


def _require(parameter: dict, key: str):
    try:
        return parameter[key]
    except KeyError:
        raise MissingField(key) from None


def decode_request(text: str | bytes) -> StreamDefinition | DataRecord:
    """Decode one request object; unknown extra fields are ignored."""
    try:
        obj = json.loads(text)
    except (ValueError, UnicodeDecodeError) as exc:
        raise BadJson(str(exc)) from None
    if not isinstance(obj, dict):
        raise BadJson("request must be a JSON object")
    rtype = obj.get("type")
    parameter = obj.get("parameter")
    if rtype not in ("D", "d"):
        raise UnknownType(f"unknown request type {rtype!r}")
    if not isinstance(parameter, dict):
        raise MissingField("parameter")

    stream_id = _require(parameter, "id")
    if not isinstance(stream_id, int) or isinstance(stream_id, bool) or not 0 <= stream_id < 2**32:
        raise BadJson(f"bad stream id {stream_id!r}")

    if rtype == "D":
        tag = _require(parameter, "tag")
        kind = _require(parameter, "type")
        if kind not in _VALID_KINDS:
            raise WrongValueKind(f"unknown value kind {kind!r}")
        encoding = parameter.get("enc", "none")
        if encoding not in ("none", "deflate"):
            raise BadJson(f"unknown encoding {encoding!r}")
        if not isinstance(tag, str):
            raise BadJson("tag must be text")
        return StreamDefinition(stream_id=stream_id, tag=tag, value_kind=kind, encoding=encoding)

    time_ms = _require(parameter, "time")
    value = _require(parameter, "value")
    if not isinstance(time_ms, int) or isinstance(time_ms, bool) or time_ms <= 0:
        raise BadJson(f"bad timestamp {time_ms!r}")
    if not isinstance(value, (int, float, bool, str)):
        raise WrongValueKind(f"unsupported value payload {type(value).__name__}")
    status = parameter.get("status", 0)
    if not isinstance(status, int) or isinstance(status, bool) or not 0 <= status <= 255:
        raise BadJson(f"bad status {status!r}")
    return DataRecord(stream_id=stream_id, time_ms=time_ms, value=value, status=status)


def coerce_value(kind: str, value: object):
    """Fit a decoded JSON payload to the stream's declared kind.

    JSON cannot distinguish 24 from 24.0, so integral numbers are accepted
    for kind F. Raises WrongValueKind on any other mismatch.
    """
    if kind == "F" and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    try:
        check_value(kind, value)
    except ValueError as exc:
        raise WrongValueKind(str(exc)) from None
    return value


def write_frame(body: str | bytes, encoding: str = "none") -> bytes:
    body_bytes = body.encode("utf-8") if isinstance(body, str) else bytes(body)
    if len(body_bytes) > MAX_BODY_BYTES:
        raise BodyTooLarge(f"body of {len(body_bytes)} bytes exceeds {MAX_BODY_BYTES}")
    if encoding == "deflate":
        payload = zlib.compress(body_bytes)
        flag = FLAG_DEFLATE
    elif encoding == "none":
        payload = body_bytes
        flag = FLAG_RAW
    else:
        raise BadFlag(f"unknown encoding {encoding!r}")
    if len(payload) > MAX_PAYLOAD_BYTES:
        raise BodyTooLarge(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD_BYTES}")
    return bytes([flag]) + len(payload).to_bytes(4, "big") + payload


def decode_frame(buf: bytes | bytearray | memoryview, pos: int = 0) -> tuple[bytes, int]:
    """Decode one frame starting at ``pos``; returns (body, next_pos).

    Raises Truncated when the buffer ends mid-frame; prefix-safe: a partial
    frame never yields a body.
    """
    view = memoryview(buf)
    try:
        if len(view) - pos < HEADER_BYTES:
            raise Truncated
        flag = view[pos]
        if flag not in (FLAG_RAW, FLAG_DEFLATE):
            raise BadFlag(f"unknown frame flag 0x{flag:02x}")
        length = int.from_bytes(view[pos + 1 : pos + 5], "big")
        if length > MAX_PAYLOAD_BYTES:
            raise BodyTooLarge(f"frame payload of {length} bytes exceeds {MAX_PAYLOAD_BYTES}")
        start = pos + HEADER_BYTES
        if len(view) - start < length:
            raise Truncated
        payload = bytes(view[start : start + length])
    finally:
        view.release()  # the caller may resize its buffer afterwards
    if flag == FLAG_DEFLATE:
        try:
            body = zlib.decompress(payload, bufsize=min(length * 4 + 64, MAX_BODY_BYTES))
        except zlib.error as exc:
            raise CorruptDeflate(str(exc)) from None
        if len(body) > MAX_BODY_BYTES:
            raise BodyTooLarge(f"decompressed body of {len(body)} bytes exceeds {MAX_BODY_BYTES}")
    else:
        body = payload
    return body, start + length


@dataclass
class FrameDecoder:
    """Incremental frame reader holding one connection's buffer state."""

    _buf: bytearray = field(default_factory=bytearray)
    _pos: int = 0

    def feed(self, data: bytes) -> None:
        self._buf += data

    def next_frame(self) -> bytes | None:
        """Return the next complete body, or None until more bytes arrive."""
        try:
            body, self._pos = decode_frame(self._buf, self._pos)
        except Truncated:
            if self._pos:
                del self._buf[: self._pos]
                self._pos = 0
            return None
        if self._pos >= len(self._buf):
            self._buf.clear()
            self._pos = 0
        return body

    def pending_bytes(self) -> int:
        return len(self._buf) - self._pos
