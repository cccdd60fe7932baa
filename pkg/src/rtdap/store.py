"""Embedded time-series storage engine.

Layout mirrors the platform schema: a 2-way tag dictionary, a raw table
keyed by (tag id, hour bucket) holding one row per tag-hour, and three
aggregation tables (minute/hour/day) holding per-bucket min/max/close
cells. Raw storage is sharded by contiguous tag-id ranges; each shard is
a memtable plus immutable sorted segment files flushed at a size
threshold. A row-level LRU cache sits over assembled raw rows.

On-disk layout (docs/storage.md): ``tags.dict``, ``store-meta.json``,
``shard-N/segment-K.sst`` and ``agg-{mm,hh,dd}/segment-K.sst``. All keys
are the frozen 12-byte rowkey; raw rows carry length-prefixed cells,
aggregation rows a fixed 48-byte cell payload.
"""

from __future__ import annotations

import bisect
import json
import os
import struct
import threading
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import (
    Resolution,
    TagName,
    decode_cell,
    encode_cell,
    encode_rowkey_aligned,
    format_tag,
    parse_tag,
)

HOUR_MS = Resolution.HOUR.value

_AGG_CELL = struct.Struct(">dddQQq")  # vmin, vmax, close, close_ts, count, fold_mark
_ROW_LEN = struct.Struct(">I")

_AGG_DIRS = {Resolution.MINUTE: "agg-mm", Resolution.HOUR: "agg-hh", Resolution.DAY: "agg-dd"}


class UnknownTag(KeyError):
    pass


class UnregisteredTag(ValueError):
    pass


class BadRange(ValueError):
    pass


class WrongBucket(ValueError):
    pass


@dataclass(slots=True)
class AggCell:
    """Per-bucket aggregate: min, max and the value at the greatest
    timestamp (close). ``fold_mark`` is the aggregation engine's resume
    marker (highest log offset folded in; -1 when built offline)."""

    tag_id: int
    resolution: Resolution
    bucket_start: int
    vmin: float
    vmax: float
    close: float
    close_ts: int
    count: int
    fold_mark: int = -1

    def validate(self) -> None:
        if self.vmin > self.vmax:
            raise ValueError(f"min {self.vmin} > max {self.vmax}")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if not self.bucket_start <= self.close_ts < self.bucket_start + self.resolution.value:
            raise WrongBucket(
                f"close_ts {self.close_ts} outside bucket [{self.bucket_start}, "
                f"{self.bucket_start + self.resolution.value})"
            )


class TagDictionary:
    """Bijective TagName <-> dense integer id map, persisted append-only."""

    def __init__(self, path: str | None = None):
        self._lock = threading.Lock()
        self._by_name: dict[str, int] = {}
        self._by_id: dict[int, str] = {}
        self._next_id = 1
        self._path = path
        self._fh = None
        if path is not None:
            if os.path.exists(path):
                with open(path, encoding="utf-8") as fh:
                    for line in fh:
                        if not line.strip():
                            continue
                        id_text, name = line.rstrip("\n").split("\t", 1)
                        tag_id = int(id_text)
                        self._by_name[name] = tag_id
                        self._by_id[tag_id] = name
                        self._next_id = max(self._next_id, tag_id + 1)
            self._fh = open(path, "a", encoding="utf-8")

    def register(self, name: str | TagName) -> int:
        text = format_tag(name) if isinstance(name, TagName) else format_tag(parse_tag(name))
        with self._lock:
            existing = self._by_name.get(text)
            if existing is not None:
                return existing
            tag_id = self._next_id
            self._next_id += 1
            self._by_name[text] = tag_id
            self._by_id[tag_id] = text
            if self._fh is not None:
                self._fh.write(f"{tag_id}\t{text}\n")
                self._fh.flush()
            return tag_id

    def id_of(self, name: str) -> int:
        try:
            return self._by_name[name]
        except KeyError:
            raise UnknownTag(name) from None

    def name_of(self, tag_id: int) -> str:
        try:
            return self._by_id[tag_id]
        except KeyError:
            raise UnknownTag(tag_id) from None

    def is_registered(self, tag_id: int) -> bool:
        return 1 <= tag_id < self._next_id

    @property
    def max_id(self) -> int:
        return self._next_id - 1

    def names(self, prefix: str = "") -> list[tuple[str, int]]:
        with self._lock:
            items = [(n, i) for n, i in self._by_name.items() if n.startswith(prefix)]
        items.sort()
        return items

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


class _RawSegment:
    """Immutable sorted run of raw rows, resident after load."""

    __slots__ = ("index", "rows", "sorted_keys")

    def __init__(self, index: int, rows: dict[bytes, bytes]):
        self.index = index
        self.rows = rows  # rowkey -> concatenated encoded cells
        self.sorted_keys = sorted(rows)

    @classmethod
    def write(cls, index: int, path: str | None, rows: dict[bytes, bytes]) -> "_RawSegment":
        if path is not None:
            tmp = path + ".tmp"
            with open(tmp, "wb") as fh:
                for key in sorted(rows):
                    cells = rows[key]
                    fh.write(key)
                    fh.write(_ROW_LEN.pack(len(cells)))
                    fh.write(cells)
            os.replace(tmp, path)
        return cls(index, rows)

    @classmethod
    def load(cls, index: int, path: str) -> "_RawSegment":
        rows: dict[bytes, bytes] = {}
        with open(path, "rb") as fh:
            data = fh.read()
        pos = 0
        while pos < len(data):
            key = data[pos : pos + 12]
            (length,) = _ROW_LEN.unpack_from(data, pos + 12)
            pos += 16
            rows[key] = data[pos : pos + length]
            pos += length
        return cls(index, rows)


class _RawShard:
    def __init__(self, index: int, path: str | None):
        self.index = index
        self.path = path
        self.lock = threading.RLock()
        self.flush_lock = threading.Lock()
        self.memtable: dict[bytes, list] = {}
        self.mem_cells = 0
        self.version = 0  # bumped on every write; guards cache fills
        self.pending: list[dict[bytes, list]] = []
        self.segments: list[_RawSegment] = []
        if path is not None:
            os.makedirs(path, exist_ok=True)
            names = [n for n in os.listdir(path) if n.startswith("segment-") and n.endswith(".sst")]
            for name in sorted(names, key=lambda n: int(n[8:-4])):
                self.segments.append(_RawSegment.load(int(name[8:-4]), os.path.join(path, name)))

    def next_segment_index(self) -> int:
        return self.segments[-1].index + 1 if self.segments else 0


def _merge_row_chunks(chunk_lists: list[list]) -> list[tuple]:
    """Assemble a row from memtable chunklets: later writes win per offset."""
    cells: dict[int, tuple] = {}
    for chunks in chunk_lists:
        for chunk in chunks:
            if chunk[0] == "f":
                _, offs, vals, sts = chunk
                for i in range(len(offs)):
                    cells[int(offs[i])] = ("F", int(sts[i]), float(vals[i]))
            else:
                for off, kind, status, value in chunk[1]:
                    cells[off] = (kind, status, value)
    return [(off,) + cells[off] for off in sorted(cells)]


def _decode_row_cells(blob: bytes) -> list[tuple]:
    cells = []
    pos = 0
    while pos < len(blob):
        off, kind, status, value, pos = decode_cell(blob, pos)
        cells.append((off, kind, status, value))
    return cells


class _LruCache:
    def __init__(self, capacity: int = 0):
        self.capacity = capacity
        self._lock = threading.Lock()
        self._rows: OrderedDict = OrderedDict()
        self.hits = 0
        self.misses = 0

    def get(self, key):
        if self.capacity <= 0:
            return None
        with self._lock:
            row = self._rows.get(key)
            if row is None:
                self.misses += 1
                return None
            self._rows.move_to_end(key)
            self.hits += 1
            return row

    def put(self, key, row) -> None:
        if self.capacity <= 0:
            return
        with self._lock:
            self._rows[key] = row
            self._rows.move_to_end(key)
            while len(self._rows) > self.capacity:
                self._rows.popitem(last=False)

    def invalidate(self, key) -> None:
        if self.capacity <= 0:
            return
        with self._lock:
            self._rows.pop(key, None)

    def clear(self) -> None:
        with self._lock:
            self._rows.clear()


class _AggSegment:
    __slots__ = ("index", "cells", "sorted_keys")

    def __init__(self, index: int, cells: dict[bytes, tuple]):
        self.index = index
        self.cells = cells
        self.sorted_keys = sorted(cells)

    @classmethod
    def write(cls, index: int, path: str | None, cells: dict[bytes, tuple]) -> "_AggSegment":
        if path is not None:
            tmp = path + ".tmp"
            with open(tmp, "wb") as fh:
                for key in sorted(cells):
                    fh.write(key)
                    fh.write(_AGG_CELL.pack(*cells[key]))
            os.replace(tmp, path)
        return cls(index, cells)

    @classmethod
    def load(cls, index: int, path: str) -> "_AggSegment":
        cells: dict[bytes, tuple] = {}
        with open(path, "rb") as fh:
            data = fh.read()
        step = 12 + _AGG_CELL.size
        for pos in range(0, len(data), step):
            key = data[pos : pos + 12]
            cells[key] = _AGG_CELL.unpack_from(data, pos + 12)
        return cls(index, cells)


class _AggTable:
    def __init__(self, res: Resolution, path: str | None):
        self.res = res
        self.path = path
        self.lock = threading.RLock()
        self.memtable: dict[bytes, tuple] = {}
        self.segments: list[_AggSegment] = []
        if path is not None:
            os.makedirs(path, exist_ok=True)
            names = [n for n in os.listdir(path) if n.startswith("segment-") and n.endswith(".sst")]
            for name in sorted(names, key=lambda n: int(n[8:-4])):
                self.segments.append(_AggSegment.load(int(name[8:-4]), os.path.join(path, name)))

    def get(self, key: bytes) -> tuple | None:
        with self.lock:
            cell = self.memtable.get(key)
            if cell is not None:
                return cell
            for seg in reversed(self.segments):
                cell = seg.cells.get(key)
                if cell is not None:
                    return cell
        return None

    def put(self, key: bytes, cell: tuple) -> None:
        with self.lock:
            self.memtable[key] = cell

    def scan(self, key_lo: bytes, key_hi: bytes) -> dict[bytes, tuple]:
        """All cells with key_lo <= key < key_hi, newest version winning."""
        out: dict[bytes, tuple] = {}
        with self.lock:
            for seg in self.segments:
                lo = bisect.bisect_left(seg.sorted_keys, key_lo)
                hi = bisect.bisect_left(seg.sorted_keys, key_hi)
                for key in seg.sorted_keys[lo:hi]:
                    out[key] = seg.cells[key]
            for key, cell in self.memtable.items():
                if key_lo <= key < key_hi:
                    out[key] = cell
        return out

    def flush(self) -> None:
        with self.lock:
            if not self.memtable:
                return
            snap = self.memtable
            self.memtable = {}
            index = self.segments[-1].index + 1 if self.segments else 0
        # Newest wins: merge the snapshot over the latest segment view is not
        # needed because get() walks segments newest-first.
        seg_path = os.path.join(self.path, f"segment-{index}.sst") if self.path else None
        seg = _AggSegment.write(index, seg_path, snap)
        with self.lock:
            self.segments.append(seg)


class TsdbStore:
    """Open (or create) a store at ``path``; ``path=None`` keeps everything
    in memory with no flushing."""

    def __init__(
        self,
        path: str | None = None,
        shards: int = 1,
        expected_tags: int = 1024,
        cache_rows: int = 0,
        flush_threshold_cells: int = 500_000,
    ):
        self.path = path
        if path is not None:
            os.makedirs(path, exist_ok=True)
            meta_path = os.path.join(path, "store-meta.json")
            if os.path.exists(meta_path):
                with open(meta_path, encoding="utf-8") as fh:
                    meta = json.load(fh)
                shards = meta["shards"]
                expected_tags = meta["expected_tags"]
            else:
                with open(meta_path, "w", encoding="utf-8") as fh:
                    json.dump({"shards": shards, "expected_tags": expected_tags}, fh)
        if shards < 1:
            raise ValueError("shards must be >= 1")
        self.shard_count = shards
        self._stride = max(1, expected_tags // shards)
        self.expected_tags = expected_tags
        self.flush_threshold_cells = flush_threshold_cells
        self.dictionary = TagDictionary(os.path.join(path, "tags.dict") if path else None)
        self._shards = [
            _RawShard(i, os.path.join(path, f"shard-{i}") if path else None) for i in range(shards)
        ]
        self._agg = {
            res: _AggTable(res, os.path.join(path, d) if path else None)
            for res, d in _AGG_DIRS.items()
        }
        self._cache = _LruCache(cache_rows)
        self._stats_lock = threading.Lock()
        self._counters = {
            "rows_probed": 0,
            "segment_rows_read": 0,
            "put_calls": 0,
            "put_records": 0,
            "flushes": 0,
        }

    # -- tags ---------------------------------------------------------------

    def register_tag(self, name: str | TagName) -> int:
        return self.dictionary.register(name)

    def shard_for(self, tag_id: int) -> int:
        return min((tag_id - 1) // self._stride, self.shard_count - 1)

    def _check_registered(self, tag_id: int) -> None:
        if not self.dictionary.is_registered(tag_id):
            raise UnregisteredTag(f"tag id {tag_id} is not registered")

    def _bump(self, counter: str, n: int = 1) -> None:
        with self._stats_lock:
            self._counters[counter] += n

    # -- raw writes ---------------------------------------------------------

    def put_batch(self, records) -> int:
        """records: iterable of (tag_id, time_ms, kind, value, status)."""
        rows: dict[bytes, list[tuple]] = {}
        n = 0
        for tag_id, time_ms, kind, value, status in records:
            self._check_registered(tag_id)
            bucket = time_ms - time_ms % HOUR_MS
            key = encode_rowkey_aligned(tag_id, bucket)
            rows.setdefault(key, []).append((time_ms - bucket, kind, status, value))
            n += 1
        self._put_rows(rows, kind_hint="o")
        self._bump("put_calls")
        self._bump("put_records", n)
        return n

    def put_batch_float(self, tag_ids, times, values, statuses) -> int:
        """Columnar fast path for F-kind records."""
        n = len(tag_ids)
        if n == 0:
            return 0
        if int(tag_ids.max()) > self.dictionary.max_id or int(tag_ids.min()) < 1:
            bad = int(tag_ids.max()) if int(tag_ids.max()) > self.dictionary.max_id else int(tag_ids.min())
            raise UnregisteredTag(f"tag id {bad} is not registered")
        bucket_idx = times // np.uint64(HOUR_MS)
        offs = (times - bucket_idx * np.uint64(HOUR_MS)).astype(np.uint32)
        combo = (tag_ids.astype(np.uint64) << np.uint64(32)) | bucket_idx
        uniq, inverse = np.unique(combo, return_inverse=True)
        order = np.argsort(inverse, kind="stable")
        sorted_inv = inverse[order]
        starts = np.flatnonzero(np.r_[True, sorted_inv[1:] != sorted_inv[:-1]])
        ends = np.r_[starts[1:], n]
        rows: dict[bytes, list] = {}
        for gi in range(len(uniq)):
            idx = order[starts[gi] : ends[gi]]
            tag_id = int(uniq[gi] >> np.uint64(32))
            bucket = int(uniq[gi] & np.uint64(0xFFFFFFFF)) * HOUR_MS
            key = encode_rowkey_aligned(tag_id, bucket)
            rows[key] = [("f", offs[idx], values[idx], statuses[idx])]
        self._put_rows(rows, kind_hint="f")
        self._bump("put_calls")
        self._bump("put_records", n)
        return n

    def _put_rows(self, rows: dict, kind_hint: str) -> None:
        from .model import decode_rowkey

        to_flush: set[int] = set()
        for key, payload in rows.items():
            tag_id, _ = decode_rowkey(key)
            shard = self._shards[self.shard_for(tag_id)]
            with shard.lock:
                shard.version += 1
                row = shard.memtable.get(key)
                if row is None:
                    row = []
                    shard.memtable[key] = row
                if kind_hint == "f":
                    for chunk in payload:
                        row.append(chunk)
                        shard.mem_cells += len(chunk[1])
                else:
                    row.append(("o", payload))
                    shard.mem_cells += len(payload)
                if shard.mem_cells >= self.flush_threshold_cells:
                    to_flush.add(shard.index)
            self._cache.invalidate(key)
        for si in to_flush:
            self._flush_shard(self._shards[si], force=False)

    # -- raw reads ----------------------------------------------------------

    def _read_row(self, tag_id: int, bucket: int) -> list[tuple] | None:
        """Assembled row cells sorted by offset, or None when empty."""
        key = encode_rowkey_aligned(tag_id, bucket)
        self._bump("rows_probed")
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        shard = self._shards[self.shard_for(tag_id)]
        with shard.lock:
            version = shard.version
            mem_chunks = [list(snap[key]) for snap in shard.pending if key in snap]
            if key in shard.memtable:
                mem_chunks.append(list(shard.memtable[key]))
            segments = list(shard.segments)
        cells: dict[int, tuple] = {}
        seg_rows = 0
        for seg in segments:  # oldest first; later writes win
            blob = seg.rows.get(key)
            if blob is not None:
                seg_rows += 1
                for off, kind, status, value in _decode_row_cells(blob):
                    cells[off] = (kind, status, value)
        if seg_rows:
            self._bump("segment_rows_read", seg_rows)
        for off, kind, status, value in _merge_row_chunks(mem_chunks):
            cells[off] = (kind, status, value)
        if not cells:
            return None
        row = [(off,) + cells[off] for off in sorted(cells)]
        # Cache only when no write raced this assembly (stale-fill guard).
        with shard.lock:
            current = shard.version
        if current == version:
            self._cache.put(key, row)
        return row

    MAX_PROBE_BUCKETS = 4096

    def scan_raw(self, tag_id: int, from_ms: int, to_ms: int) -> list[tuple]:
        """All records with from_ms <= ts < to_ms as (time_ms, kind, value,
        status), ascending; reads one row per hour bucket intersecting the
        window. Windows wider than MAX_PROBE_BUCKETS hours fall back to a
        key-range scan that touches only existing rows."""
        if not self.dictionary.is_registered(tag_id):
            raise UnknownTag(tag_id)
        if from_ms > to_ms:
            raise BadRange(f"from {from_ms} > to {to_ms}")
        out: list[tuple] = []
        if from_ms == to_ms:
            return out
        first_bucket = from_ms - from_ms % HOUR_MS
        n_buckets = (to_ms - first_bucket + HOUR_MS - 1) // HOUR_MS
        if n_buckets <= self.MAX_PROBE_BUCKETS:
            buckets: list[int] = list(range(first_bucket, to_ms, HOUR_MS))
        else:
            buckets = self._existing_buckets(tag_id, first_bucket, to_ms)
        for bucket in buckets:
            row = self._read_row(tag_id, bucket)
            if row:
                lo = from_ms - bucket
                hi = to_ms - bucket
                for off, kind, status, value in row:
                    if lo <= off < hi:
                        out.append((bucket + off, kind, value, status))
        return out

    def _existing_buckets(self, tag_id: int, bucket_lo: int, to_ms: int) -> list[int]:
        key_lo = encode_rowkey_aligned(tag_id, bucket_lo)
        key_hi = encode_rowkey_aligned(tag_id, to_ms)  # exclusive bound
        shard = self._shards[self.shard_for(tag_id)]
        keys: set[bytes] = set()
        with shard.lock:
            for seg in shard.segments:
                lo = bisect.bisect_left(seg.sorted_keys, key_lo)
                hi = bisect.bisect_left(seg.sorted_keys, key_hi)
                keys.update(seg.sorted_keys[lo:hi])
            for source in (*shard.pending, shard.memtable):
                for key in source:
                    if key_lo <= key < key_hi:
                        keys.add(key)
        return [int.from_bytes(k[4:], "big") for k in sorted(keys)]

    # -- aggregation tables ---------------------------------------------------

    def get_agg_cell(self, tag_id: int, res: Resolution, bucket_start: int) -> AggCell | None:
        key = encode_rowkey_aligned(tag_id, bucket_start)
        cell = self._agg[res].get(key)
        if cell is None:
            return None
        return AggCell(tag_id, res, bucket_start, *cell)

    def upsert_agg(self, cell: AggCell) -> None:
        """Replace the cell at (tag, resolution, bucket)."""
        cell.validate()
        key = encode_rowkey_aligned(cell.tag_id, cell.bucket_start)
        self._agg[cell.resolution].put(
            key, (cell.vmin, cell.vmax, cell.close, cell.close_ts, cell.count, cell.fold_mark)
        )

    def read_agg(self, tag_id: int, res: Resolution, from_ms: int, to_ms: int) -> list[AggCell]:
        """Cells with bucket_start in [bucket_of(from), bucket_of(to))."""
        if not self.dictionary.is_registered(tag_id):
            raise UnknownTag(tag_id)
        if from_ms > to_ms:
            raise BadRange(f"from {from_ms} > to {to_ms}")
        width = res.value
        b_lo = from_ms - from_ms % width
        b_hi = to_ms - to_ms % width
        if b_lo >= b_hi:
            return []
        key_lo = encode_rowkey_aligned(tag_id, b_lo)
        key_hi = encode_rowkey_aligned(tag_id, b_hi)
        found = self._agg[res].scan(key_lo, key_hi)
        out = []
        for key in sorted(found):
            bucket_start = int.from_bytes(key[4:], "big")
            out.append(AggCell(tag_id, res, bucket_start, *found[key]))
        return out

    def rebuild_aggregates(self, from_ms: int, to_ms: int, tag_ids=None) -> int:
        """Offline recompute of all aggregate cells intersecting the window
        from raw data; equals the runtime fold. Existing fold marks are
        preserved. Requires a quiesced aggregation topology."""
        if tag_ids is None:
            tag_ids = range(1, self.dictionary.max_id + 1)
        written = 0
        day = Resolution.DAY.value
        for tag_id in tag_ids:
            day_lo = from_ms - from_ms % day
            d = day_lo
            while d < to_ms:
                records = self.scan_raw(tag_id, d, d + day)
                floats = [(t, v) for t, kind, v, _s in records if kind == "F"]
                if floats:
                    times = np.array([t for t, _ in floats], dtype=np.uint64)
                    values = np.array([v for _, v in floats], dtype=np.float64)
                    for res in Resolution:
                        written += self._rebuild_res(tag_id, res, times, values)
                d += day
        return written

    def _rebuild_res(self, tag_id: int, res: Resolution, times, values) -> int:
        width = np.uint64(res.value)
        buckets = (times // width) * width
        uniq, inverse = np.unique(buckets, return_inverse=True)
        vmin, vmax, close, close_ts, count = kernels.fold_groups(
            inverse.astype(np.int64), times, values, len(uniq)
        )
        written = 0
        for gi, bucket in enumerate(uniq):
            old = self.get_agg_cell(tag_id, res, int(bucket))
            self.upsert_agg(
                AggCell(
                    tag_id,
                    res,
                    int(bucket),
                    float(vmin[gi]),
                    float(vmax[gi]),
                    float(close[gi]),
                    int(close_ts[gi]),
                    int(count[gi]),
                    old.fold_mark if old is not None else -1,
                )
            )
            written += 1
        return written

    # -- cache / maintenance ---------------------------------------------------

    def configure_cache(self, rows: int) -> None:
        self._cache.capacity = rows
        if rows <= 0:
            self._cache.clear()

    def cache_stats(self) -> tuple[int, int]:
        return self._cache.hits, self._cache.misses

    def stats(self) -> dict:
        with self._stats_lock:
            out = dict(self._counters)
        out["cache_hits"] = self._cache.hits
        out["cache_misses"] = self._cache.misses
        out["registered_tags"] = self.dictionary.max_id
        return out

    def _flush_shard(self, shard: _RawShard, force: bool = True) -> None:
        with shard.flush_lock:
            with shard.lock:
                if not shard.memtable:
                    return
                if not force and shard.mem_cells < self.flush_threshold_cells:
                    return  # a queued trigger already flushed
                snap = shard.memtable
                shard.memtable = {}
                shard.mem_cells = 0
                shard.pending.append(snap)
                index = shard.next_segment_index()
            rows: dict[bytes, bytes] = {}
            for key, chunks in snap.items():
                merged = _merge_row_chunks([chunks])
                rows[key] = b"".join(
                    encode_cell(off, kind, status, value) for off, kind, status, value in merged
                )
            path = os.path.join(shard.path, f"segment-{index}.sst") if shard.path else None
            seg = _RawSegment.write(index, path, rows)
            with shard.lock:
                shard.segments.append(seg)
                shard.pending.remove(snap)
            self._bump("flushes")

    def flush(self) -> None:
        for shard in self._shards:
            self._flush_shard(shard)
        if self.path is not None:
            for table in self._agg.values():
                table.flush()

    def close(self) -> None:
        self.flush()
        self.dictionary.close()
