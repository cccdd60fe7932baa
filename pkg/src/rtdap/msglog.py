"""Embedded partitioned append-only log with consumer groups.

Per-partition offsets are dense and strictly increasing from 0; records
for one tag always land in the same partition (tag id mod partition
count). Consumer groups track a committed next-to-read offset per
partition; poll never advances it, so an uncommitted batch is redelivered
after a crash (at-least-once).

File durability appends one framed record per append to
``partition-N.log`` (format in docs/log-format.md) and persists commits
per group; a torn tail record is truncated on recovery.
"""

from __future__ import annotations

import json
import os
import struct
import threading
import zlib
from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

from .model import BadValue

_RECORD_HEAD = struct.Struct(">IQBB")  # tag_id, time_ms, kind byte, status
_KIND_BYTES = {"F": 0x46, "I": 0x49, "B": 0x42, "S": 0x53}
_KIND_FROM_BYTE = {v: k for k, v in _KIND_BYTES.items()}


class UnknownGroup(KeyError):
    pass


class OffsetBeyondHead(ValueError):
    pass


class LogClosed(RuntimeError):
    pass


@dataclass(frozen=True, slots=True)
class LogRecord:
    tag_id: int
    time_ms: int
    kind: str
    value: object
    status: int
    offset: int


def _encode_record(tag_id: int, time_ms: int, kind: str, value, status: int) -> bytes:
    if kind == "F":
        payload = struct.pack(">d", float(value))
    elif kind == "I":
        payload = struct.pack(">q", int(value))
    elif kind == "B":
        payload = b"\x01" if value else b"\x00"
    elif kind == "S":
        payload = str(value).encode("utf-8")
    else:
        raise BadValue(f"unknown kind {kind!r}")
    body = _RECORD_HEAD.pack(tag_id, time_ms, _KIND_BYTES[kind], status & 0xFF) + payload
    return struct.pack(">I", len(body)) + body + struct.pack(">I", zlib.crc32(body))


def _decode_record_body(body: bytes):
    tag_id, time_ms, kind_byte, status = _RECORD_HEAD.unpack_from(body, 0)
    kind = _KIND_FROM_BYTE[kind_byte]
    payload = body[_RECORD_HEAD.size :]
    if kind == "F":
        value: object = struct.unpack(">d", payload)[0]
    elif kind == "I":
        value = struct.unpack(">q", payload)[0]
    elif kind == "B":
        value = payload == b"\x01"
    else:
        value = payload.decode("utf-8")
    return tag_id, time_ms, kind, value, status


class _Partition:
    """One partition: columnar float chunks interleaved with object chunks,
    located by base offset."""

    __slots__ = ("index", "lock", "data_ready", "bases", "chunks", "head", "fh")

    def __init__(self, index: int, fh=None):
        self.index = index
        self.lock = threading.Lock()
        self.data_ready = threading.Condition(self.lock)
        self.bases: list[int] = []
        self.chunks: list = []
        self.head = 0
        self.fh = fh

    def append_rows(self, rows: list[tuple]) -> int:
        """rows: (tag_id, time_ms, kind, value, status); returns base offset."""
        with self.lock:
            base = self.head
            self.bases.append(base)
            self.chunks.append(("o", rows))
            self.head += len(rows)
            if self.fh is not None:
                self.fh.write(b"".join(_encode_record(*r) for r in rows))
                self.fh.flush()
            self.data_ready.notify_all()
            return base

    def append_float_arrays(self, tag_ids, times, values, statuses) -> int:
        with self.lock:
            base = self.head
            self.bases.append(base)
            self.chunks.append(("f", tag_ids, times, values, statuses))
            self.head += len(tag_ids)
            if self.fh is not None:
                self.fh.write(
                    b"".join(
                        _encode_record(int(tag_ids[i]), int(times[i]), "F", float(values[i]), int(statuses[i]))
                        for i in range(len(tag_ids))
                    )
                )
                self.fh.flush()
            self.data_ready.notify_all()
            return base

    def read(self, start: int, max_records: int) -> list[LogRecord]:
        with self.lock:
            head = self.head
            if start >= head or max_records <= 0:
                return []
            ci = bisect_right(self.bases, start) - 1
            # Snapshot the chunk list position; chunks are append-only.
            chunks = self.chunks
            bases = self.bases
            nchunks = len(chunks)
        out: list[LogRecord] = []
        want = min(max_records, head - start)
        pos = start
        while len(out) < want and ci < nchunks:
            base = bases[ci]
            chunk = chunks[ci]
            if chunk[0] == "f":
                _, tag_ids, times, values, statuses = chunk
                clen = len(tag_ids)
                lo = pos - base
                hi = min(clen, lo + want - len(out))
                for i in range(lo, hi):
                    out.append(
                        LogRecord(int(tag_ids[i]), int(times[i]), "F", float(values[i]), int(statuses[i]), base + i)
                    )
            else:
                rows = chunk[1]
                clen = len(rows)
                lo = pos - base
                hi = min(clen, lo + want - len(out))
                for i in range(lo, hi):
                    t, ms, kind, value, status = rows[i]
                    out.append(LogRecord(t, ms, kind, value, status, base + i))
            pos = base + hi
            ci += 1
        return out


class MessageLog:
    """Create with ``MessageLog(partitions, durability="memory")`` or
    ``durability="file", path=dir``; reopen a file log with
    ``MessageLog.open(dir)``."""

    def __init__(self, partitions: int, durability: str = "memory", path: str | None = None):
        if not 1 <= partitions <= 256:
            raise ValueError(f"partitions must be in 1..256, got {partitions}")
        if durability not in ("memory", "file"):
            raise ValueError(f"unknown durability {durability!r}")
        if durability == "file" and not path:
            raise ValueError("file durability needs a path")
        self.partition_count = partitions
        self.durability = durability
        self.path = path
        self._groups: dict[str, list[int]] = {}
        self._groups_lock = threading.Lock()
        self._closed = False
        if durability == "file":
            os.makedirs(path, exist_ok=True)
            with open(os.path.join(path, "meta.json"), "w", encoding="utf-8") as fh:
                json.dump({"partitions": partitions}, fh)
            self._partitions = [
                _Partition(i, fh=open(os.path.join(path, f"partition-{i}.log"), "ab"))
                for i in range(partitions)
            ]
        else:
            self._partitions = [_Partition(i) for i in range(partitions)]

    @classmethod
    def open(cls, path: str) -> "MessageLog":
        with open(os.path.join(path, "meta.json"), encoding="utf-8") as fh:
            meta = json.load(fh)
        log = cls(meta["partitions"], durability="file", path=path)
        for part in log._partitions:
            rows = _recover_partition(os.path.join(path, f"partition-{part.index}.log"))
            if rows:
                # populate memory only; the rows are already on disk
                part.bases.append(0)
                part.chunks.append(("o", rows))
                part.head = len(rows)
        for name in os.listdir(path):
            if name.startswith("group-") and name.endswith(".offsets"):
                with open(os.path.join(path, name), encoding="utf-8") as fh:
                    state = json.load(fh)
                log._groups[state["group"]] = [int(x) for x in state["committed"]]
        return log

    # -- producers ---------------------------------------------------------

    def partition_for(self, tag_id: int) -> int:
        return tag_id % self.partition_count

    def append(self, tag_id: int, time_ms: int, kind: str, value, status: int = 0) -> tuple[int, int]:
        if self._closed:
            raise LogClosed
        p = self.partition_for(tag_id)
        base = self._partitions[p].append_rows([(tag_id, time_ms, kind, value, status)])
        return p, base

    def append_batch(self, rows: list[tuple]) -> int:
        """rows: (tag_id, time_ms, kind, value, status), routed per record."""
        if self._closed:
            raise LogClosed
        if not rows:
            return 0
        per_part: dict[int, list[tuple]] = {}
        for row in rows:
            per_part.setdefault(self.partition_for(row[0]), []).append(row)
        for p, chunk in per_part.items():
            self._partitions[p].append_rows(chunk)
        return len(rows)

    def append_float_batch(self, tag_ids, times, values, statuses) -> int:
        """Columnar fast path for F-kind records (ingest hot path)."""
        if self._closed:
            raise LogClosed
        n = len(tag_ids)
        if n == 0:
            return 0
        parts = tag_ids % np.uint32(self.partition_count)
        if (parts == parts[0]).all():
            self._partitions[int(parts[0])].append_float_arrays(tag_ids, times, values, statuses)
            return n
        for p in np.unique(parts):
            mask = parts == p
            self._partitions[int(p)].append_float_arrays(
                tag_ids[mask], times[mask], values[mask], statuses[mask]
            )
        return n

    # -- consumers ---------------------------------------------------------

    def register_group(self, name: str) -> None:
        with self._groups_lock:
            if name not in self._groups:
                self._groups[name] = [0] * self.partition_count
                self._persist_group(name)

    def _committed(self, group: str) -> list[int]:
        try:
            return self._groups[group]
        except KeyError:
            raise UnknownGroup(group) from None

    def poll(self, group: str, partition: int, max_records: int, from_offset: int | None = None) -> list[LogRecord]:
        """Read up to max_records starting at the committed position (or an
        explicit from_offset for consumers that track their own read-ahead);
        never advances the commit."""
        committed = self._committed(group)[partition]
        start = committed if from_offset is None else from_offset
        return self._partitions[partition].read(start, max_records)

    def committed_offset(self, group: str, partition: int) -> int:
        return self._committed(group)[partition]

    def commit(self, group: str, partition: int, up_to_offset: int) -> None:
        """Advance the next-to-read position to up_to_offset (monotone)."""
        committed = self._committed(group)
        part = self._partitions[partition]
        with part.lock:
            if up_to_offset > part.head:
                raise OffsetBeyondHead(f"{up_to_offset} > head {part.head}")
        if up_to_offset > committed[partition]:
            committed[partition] = up_to_offset
            self._persist_group(group)

    def lag(self, group: str, partition: int | None = None) -> int:
        committed = self._committed(group)
        if partition is not None:
            return self._partitions[partition].head - committed[partition]
        return sum(self._partitions[p].head - committed[p] for p in range(self.partition_count))

    def head(self, partition: int) -> int:
        return self._partitions[partition].head

    def total_records(self) -> int:
        return sum(p.head for p in self._partitions)

    def wait_for_data(self, group: str, partition: int, position: int, timeout: float) -> bool:
        """Block until head > position (or timeout); True when data exists."""
        part = self._partitions[partition]
        with part.lock:
            if part.head > position:
                return True
            part.data_ready.wait(timeout)
            return part.head > position

    def _persist_group(self, name: str) -> None:
        if self.durability != "file":
            return
        target = os.path.join(self.path, f"group-{name}.offsets")
        tmp = target + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump({"group": name, "committed": self._groups[name]}, fh)
        os.replace(tmp, target)

    def close(self) -> None:
        self._closed = True
        if self.durability == "file":
            for part in self._partitions:
                with part.lock:
                    part.fh.close()
                    part.fh = None


def _recover_partition(path: str) -> list[tuple]:
    """Replay a partition file; truncate at the first torn or corrupt tail."""
    rows: list[tuple] = []
    if not os.path.exists(path):
        return rows
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0
    good_end = 0
    while len(data) - pos >= 4:
        (length,) = struct.unpack_from(">I", data, pos)
        if len(data) - pos - 4 < length + 4:
            break
        body = data[pos + 4 : pos + 4 + length]
        (crc,) = struct.unpack_from(">I", data, pos + 4 + length)
        if crc != zlib.crc32(body):
            break
        rows.append(_decode_record_body(body))
        pos += 8 + length
        good_end = pos
    if good_end < len(data):
        with open(path, "r+b") as fh:
            fh.truncate(good_end)
    return rows
