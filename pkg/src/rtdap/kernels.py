"""Hot-path kernels with a compiled core and a pure-Python fallback.

Two inner loops dominate CPU at saturation: scanning ingest buffers
(frame split + data-record JSON parse) and folding record batches into
min/max/close aggregate cells. Both have a Cython implementation
(``rtdap._ckernels``) that releases the GIL, selected automatically at
import; the pure implementations below are the behavioural reference and
the fallback when the extension is unavailable (or ``RTDAP_PURE=1``).

The compiled scanner only fast-parses frames it fully understands;
anything else is deferred to the slow path, so both lanes produce the
same records and the same errors for any input. ``rtdap bench kernels``
compares the lanes.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import wire

U32_MAX = 2**32 - 1
I64_MAX = 2**63 - 1


@dataclass(slots=True)
class ScanOut:
    """Result of scanning a byte buffer of concatenated frames.

    Fast-parsed data records land in the columnar arrays, in buffer order.
    Frames needing the slow path are listed as (position, flag, payload)
    where position is the index into the fast stream *before* which the
    slow frame occurred, so total arrival order can be reconstructed.
    ``error`` is 0, or one of the FATAL_* codes with ``consumed`` pointing
    at the offending frame.
    """

    consumed: int = 0
    count: int = 0
    ids: np.ndarray = field(default_factory=lambda: _EMPTY_U32)
    times: np.ndarray = field(default_factory=lambda: _EMPTY_U64)
    values: np.ndarray = field(default_factory=lambda: _EMPTY_F64)
    ivalues: np.ndarray = field(default_factory=lambda: _EMPTY_I64)
    is_int: np.ndarray = field(default_factory=lambda: _EMPTY_U8)
    statuses: np.ndarray = field(default_factory=lambda: _EMPTY_U8)
    slow: list[tuple[int, int, bytes]] = field(default_factory=list)
    error: int = 0


_EMPTY_U32 = np.empty(0, dtype=np.uint32)
_EMPTY_U64 = np.empty(0, dtype=np.uint64)
_EMPTY_F64 = np.empty(0, dtype=np.float64)
_EMPTY_I64 = np.empty(0, dtype=np.int64)
_EMPTY_U8 = np.empty(0, dtype=np.uint8)

FATAL_NONE = 0
FATAL_BAD_FLAG = 1
FATAL_TOO_LARGE = 2


def _classify_record(body: bytes):
    """Fast-stream eligibility for the pure lane: a decoded data record
    with a numeric payload and in-range fields, else None."""
    try:
        req = wire.decode_request(body)
    except wire.WireError:
        return None
    if not isinstance(req, wire.DataRecord):
        return None
    v = req.value
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        return None
    if isinstance(v, int) and not -I64_MAX <= v <= I64_MAX:
        return None
    if req.time_ms > I64_MAX or req.stream_id > U32_MAX:
        return None
    return req


def pure_scan_frames(buf, start: int = 0, max_payload: int = wire.MAX_PAYLOAD_BYTES) -> ScanOut:
    out = ScanOut()
    ids: list[int] = []
    times: list[int] = []
    values: list[float] = []
    ivalues: list[int] = []
    is_int: list[int] = []
    statuses: list[int] = []
    pos = start
    view = memoryview(buf)
    while True:
        if len(view) - pos < wire.HEADER_BYTES:
            break
        flag = view[pos]
        if flag not in (wire.FLAG_RAW, wire.FLAG_DEFLATE):
            out.error = FATAL_BAD_FLAG
            break
        length = int.from_bytes(view[pos + 1 : pos + 5], "big")
        if length > max_payload:
            out.error = FATAL_TOO_LARGE
            break
        if len(view) - pos - wire.HEADER_BYTES < length:
            break
        payload = bytes(view[pos + wire.HEADER_BYTES : pos + wire.HEADER_BYTES + length])
        pos += wire.HEADER_BYTES + length
        rec = _classify_record(payload) if flag == wire.FLAG_RAW else None
        if rec is None:
            out.slow.append((len(ids), flag, payload))
            continue
        ids.append(rec.stream_id)
        times.append(rec.time_ms)
        if isinstance(rec.value, int):
            values.append(float(rec.value))
            ivalues.append(rec.value)
            is_int.append(1)
        else:
            values.append(rec.value)
            ivalues.append(0)
            is_int.append(0)
        statuses.append(rec.status)
    out.consumed = pos - start
    out.count = len(ids)
    if ids:
        out.ids = np.array(ids, dtype=np.uint32)
        out.times = np.array(times, dtype=np.uint64)
        out.values = np.array(values, dtype=np.float64)
        out.ivalues = np.array(ivalues, dtype=np.int64)
        out.is_int = np.array(is_int, dtype=np.uint8)
        out.statuses = np.array(statuses, dtype=np.uint8)
    return out


def pure_parse_record_body(body: bytes):
    """Parse one decompressed body; returns (id, time, f64, i64, is_int,
    status) or None for the slow path."""
    rec = _classify_record(body)
    if rec is None:
        return None
    if isinstance(rec.value, int):
        return (rec.stream_id, rec.time_ms, float(rec.value), rec.value, 1, rec.status)
    return (rec.stream_id, rec.time_ms, rec.value, 0, 0, rec.status)


def pure_fold_groups(group_idx, times, values, ngroups):
    """Per-group (min, max, close, close_ts, count) over a record batch.

    ``close`` is the value of the greatest timestamp in the group; ties go
    to the later array position (arrival order).
    """
    n = len(times)
    vmin = np.full(ngroups, np.inf)
    vmax = np.full(ngroups, -np.inf)
    close = np.zeros(ngroups)
    close_ts = np.zeros(ngroups, dtype=np.uint64)
    count = np.zeros(ngroups, dtype=np.int64)
    if n == 0:
        return vmin, vmax, close, close_ts, count
    order = np.lexsort((np.arange(n), times, group_idx))
    g_sorted = group_idx[order]
    v_sorted = values[order]
    starts = np.flatnonzero(np.r_[True, g_sorted[1:] != g_sorted[:-1]])
    ends = np.r_[starts[1:], n]
    groups = g_sorted[starts]
    vmin[groups] = np.minimum.reduceat(v_sorted, starts)
    vmax[groups] = np.maximum.reduceat(v_sorted, starts)
    last = order[ends - 1]
    close[groups] = values[last]
    close_ts[groups] = times[last]
    count[groups] = ends - starts
    return vmin, vmax, close, close_ts, count


def pure_fold_one(times, values, start: int = 0, stop: int | None = None):
    """Fold a single run of records; returns (min, max, close, close_ts, n)."""
    stop = len(times) if stop is None else stop
    n = stop - start
    if n <= 0:
        raise ValueError("empty fold")
    t = times[start:stop]
    v = values[start:stop]
    last = stop - 1 - int(np.argmax(t[::-1]))
    return float(np.min(v)), float(np.max(v)), float(values[last]), int(times[last]), n


scan_frames = pure_scan_frames
parse_record_body = pure_parse_record_body
fold_groups = pure_fold_groups
fold_one = pure_fold_one
HAVE_NATIVE = False
LANE = "pure"

if os.environ.get("RTDAP_PURE") != "1":
    try:
        from . import _ckernels

        scan_frames = _ckernels.scan_frames
        parse_record_body = _ckernels.parse_record_body
        fold_groups = _ckernels.fold_groups
        fold_one = _ckernels.fold_one
        HAVE_NATIVE = True
        LANE = "compiled"
    except ImportError:
        pass
