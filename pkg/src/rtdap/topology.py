"""Streaming aggregation engine: one spout/bolt pipeline per log partition.

Each pipeline runs two threads sharing a bounded queue: the spout keeps
filling the queue from its partition (reading ahead of the commit), the
bolt drains the whole queue as one batch, writes raw records, folds
min/max/close cells at minute/hour/day resolution, and commits offsets
only after all writes. Batch size therefore adapts to load: the busier
the bolt, the fuller the queue it drains next, up to the hard cap.

Redelivery safety: every cell stores the highest log offset folded into
it (fold_mark); refolding a redelivered batch skips records at or below
the mark, so crash-restart between poll and commit leaves tables
identical to a crash-free run.
"""

from __future__ import annotations

import threading
import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import Resolution
from .msglog import LogRecord, MessageLog
from .store import AggCell, TsdbStore, WrongBucket


class PipelineKilled(Exception):
    """Raised by a failpoint to simulate a crash between poll and commit."""


class AdaptiveQueue:
    """Bounded FIFO buffer between spout and bolt; never exceeds max_queue."""

    def __init__(self, max_queue: int):
        if not 1 <= max_queue <= 100_000:
            raise ValueError(f"max_queue must be in 1..100000, got {max_queue}")
        self.max_queue = max_queue
        self._items: deque = deque()
        self._lock = threading.Lock()
        self._not_full = threading.Condition(self._lock)
        self._not_empty = threading.Condition(self._lock)
        self.max_seen = 0

    def __len__(self) -> int:
        with self._lock:
            return len(self._items)

    def free(self) -> int:
        with self._lock:
            return self.max_queue - len(self._items)

    def put_many(self, items) -> int:
        """Append up to the free space; returns the number accepted."""
        with self._lock:
            space = self.max_queue - len(self._items)
            accepted = items[:space]
            self._items.extend(accepted)
            if len(self._items) > self.max_queue:
                raise AssertionError("queue exceeded max_queue")
            if len(self._items) > self.max_seen:
                self.max_seen = len(self._items)
            if accepted:
                self._not_empty.notify_all()
            return len(accepted)

    def drain_all(self, timeout: float | None = None) -> list:
        """Take the entire queue as one batch (blocking up to timeout)."""
        with self._lock:
            if not self._items and timeout:
                self._not_empty.wait(timeout)
            batch = list(self._items)
            self._items.clear()
            if batch:
                self._not_full.notify_all()
            return batch

    def wait_not_full(self, timeout: float) -> int:
        with self._lock:
            if len(self._items) >= self.max_queue:
                self._not_full.wait(timeout)
            return self.max_queue - len(self._items)

    def wake_all(self) -> None:
        with self._lock:
            self._not_empty.notify_all()
            self._not_full.notify_all()


@dataclass
class BoltMetrics:
    total_exec_time: float = 0.0
    scan_time: float = 0.0
    write_time: float = 0.0
    compute_time: float = 0.0
    batches_processed: int = 0
    records_processed: int = 0
    max_batch_time: float = 0.0
    max_batch_size: int = 0
    logical_gets: int = 0
    logical_puts: int = 0
    physical_gets: int = 0
    physical_puts: int = 0
    drain_sizes_sum: int = 0

    @property
    def avg_queue_size(self) -> float:
        return self.drain_sizes_sum / self.batches_processed if self.batches_processed else 0.0

    def merge(self, other: "BoltMetrics") -> None:
        self.total_exec_time += other.total_exec_time
        self.scan_time += other.scan_time
        self.write_time += other.write_time
        self.compute_time += other.compute_time
        self.batches_processed += other.batches_processed
        self.records_processed += other.records_processed
        self.max_batch_time = max(self.max_batch_time, other.max_batch_time)
        self.max_batch_size = max(self.max_batch_size, other.max_batch_size)
        self.logical_gets += other.logical_gets
        self.logical_puts += other.logical_puts
        self.physical_gets += other.physical_gets
        self.physical_puts += other.physical_puts
        self.drain_sizes_sum += other.drain_sizes_sum

    def as_dict(self) -> dict:
        return {
            "total_exec_time": self.total_exec_time,
            "scan_time": self.scan_time,
            "write_time": self.write_time,
            "compute_time": self.compute_time,
            "batches_processed": self.batches_processed,
            "records_processed": self.records_processed,
            "avg_queue_size": self.avg_queue_size,
            "max_batch_time": self.max_batch_time,
            "max_batch_size": self.max_batch_size,
            "logical_gets": self.logical_gets,
            "logical_puts": self.logical_puts,
            "physical_gets": self.physical_gets,
            "physical_puts": self.physical_puts,
        }


def update_cell(
    cell: AggCell | None,
    time_ms: int,
    value: float,
    *,
    tag_id: int | None = None,
    res: Resolution | None = None,
    bucket_start: int | None = None,
) -> AggCell:
    """Fold one record into a cell (absent -> singleton cell).

    Close follows the greatest timestamp; on a tie the newer record wins.
    """
    if cell is None:
        if tag_id is None or res is None or bucket_start is None:
            raise ValueError("absent cell needs tag_id, res and bucket_start")
        if not bucket_start <= time_ms < bucket_start + res.value:
            raise WrongBucket(f"ts {time_ms} outside bucket {bucket_start}")
        return AggCell(tag_id, res, bucket_start, value, value, value, time_ms, 1)
    if not cell.bucket_start <= time_ms < cell.bucket_start + cell.resolution.value:
        raise WrongBucket(f"ts {time_ms} outside bucket {cell.bucket_start}")
    close, close_ts = (value, time_ms) if time_ms >= cell.close_ts else (cell.close, cell.close_ts)
    return AggCell(
        cell.tag_id,
        cell.resolution,
        cell.bucket_start,
        min(cell.vmin, value),
        max(cell.vmax, value),
        close,
        close_ts,
        cell.count + 1,
        cell.fold_mark,
    )


def _noop_failpoint(stage: str) -> None:
    return None


def bolt_process(
    store: TsdbStore,
    batch: list[LogRecord],
    metrics: BoltMetrics,
    failpoint=_noop_failpoint,
) -> None:
    """Process one drained batch: raw write, then per-resolution cell folds,
    in arrival order. The caller commits offsets afterwards."""
    t_start = time.perf_counter()
    n = len(batch)

    t0 = time.perf_counter()
    f_tags, f_times, f_values, f_statuses, f_offsets = [], [], [], [], []
    other_rows = []
    for rec in batch:
        if rec.kind == "F":
            f_tags.append(rec.tag_id)
            f_times.append(rec.time_ms)
            f_values.append(rec.value)
            f_statuses.append(rec.status)
            f_offsets.append(rec.offset)
        else:
            other_rows.append((rec.tag_id, rec.time_ms, rec.kind, rec.value, rec.status))
    nf = len(f_tags)
    if nf:
        tags = np.array(f_tags, dtype=np.uint32)
        times = np.array(f_times, dtype=np.uint64)
        values = np.array(f_values, dtype=np.float64)
        statuses = np.array(f_statuses, dtype=np.uint8)
        offsets = np.array(f_offsets, dtype=np.int64)
    metrics.compute_time += time.perf_counter() - t0

    failpoint("polled")

    # Raw write: one physical put per path, n logical writes.
    t0 = time.perf_counter()
    if nf:
        store.put_batch_float(tags, times, values, statuses)
        metrics.physical_puts += 1
    if other_rows:
        store.put_batch(other_rows)
        metrics.physical_puts += 1
    metrics.logical_puts += n
    metrics.write_time += time.perf_counter() - t0

    failpoint("raw_written")

    if nf:
        # Within-batch dedupe on (tag, exact ms): the raw table keeps the
        # last write, so the fold must see the same record set.
        t0 = time.perf_counter()
        order = np.lexsort((offsets, times, tags))
        s_tags = tags[order]
        s_times = times[order]
        last_of_key = np.r_[(s_tags[1:] != s_tags[:-1]) | (s_times[1:] != s_times[:-1]), True]
        keep = order[last_of_key]
        d_tags = tags[keep]
        d_times = times[keep]
        d_values = values[keep]
        d_offsets = offsets[keep]
        metrics.compute_time += time.perf_counter() - t0
        metrics.logical_puts += 3 * len(d_tags)  # one cell update per resolution

        for res in Resolution:
            _fold_resolution(store, res, d_tags, d_times, d_values, d_offsets, metrics, failpoint)

    failpoint("before_commit")
    dt = time.perf_counter() - t_start
    metrics.total_exec_time += dt
    metrics.batches_processed += 1
    metrics.records_processed += n
    metrics.drain_sizes_sum += n
    metrics.max_batch_time = max(metrics.max_batch_time, dt)
    metrics.max_batch_size = max(metrics.max_batch_size, n)


def _fold_resolution(store, res, tags, times, values, offsets, metrics, failpoint) -> None:
    """Fold deduped, (tag, ts)-sorted float records into one resolution's
    cells: read existing cells, merge the batch fold, upsert."""
    width = np.uint64(res.value)
    t0 = time.perf_counter()
    buckets = (times // width) * width
    # Records are sorted by (tag, ts), so (tag, bucket) groups are runs.
    if len(tags) > 1:
        boundary = (tags[1:] != tags[:-1]) | (buckets[1:] != buckets[:-1])
        group_idx = np.r_[0, np.cumsum(boundary)].astype(np.int64)
        reps = np.r_[0, np.flatnonzero(boundary) + 1]
    else:
        group_idx = np.zeros(1, dtype=np.int64)
        reps = np.array([0])
    ngroups = len(reps)
    ends = np.r_[reps[1:], len(tags)]
    vmin, vmax, close, close_ts, count = kernels.fold_groups(group_idx, times, values, ngroups)
    min_off = np.minimum.reduceat(offsets, reps)
    max_off = np.maximum.reduceat(offsets, reps)
    metrics.compute_time += time.perf_counter() - t0

    for gi in range(ngroups):
        tag_id = int(tags[reps[gi]])
        bucket = int(buckets[reps[gi]])

        t0 = time.perf_counter()
        cell = store.get_agg_cell(tag_id, res, bucket)
        metrics.scan_time += time.perf_counter() - t0
        metrics.logical_gets += 1
        metrics.physical_gets += 1

        t0 = time.perf_counter()
        if cell is None:
            merged = AggCell(
                tag_id,
                res,
                bucket,
                float(vmin[gi]),
                float(vmax[gi]),
                float(close[gi]),
                int(close_ts[gi]),
                int(count[gi]),
                int(max_off[gi]),
            )
        elif int(min_off[gi]) > cell.fold_mark:
            # Common path: nothing in this group was folded before.
            c, cts = (
                (float(close[gi]), int(close_ts[gi]))
                if int(close_ts[gi]) >= cell.close_ts
                else (cell.close, cell.close_ts)
            )
            merged = AggCell(
                tag_id,
                res,
                bucket,
                min(cell.vmin, float(vmin[gi])),
                max(cell.vmax, float(vmax[gi])),
                c,
                cts,
                cell.count + int(count[gi]),
                max(cell.fold_mark, int(max_off[gi])),
            )
        else:
            # Redelivered batch: fold only records beyond the cell's mark.
            merged = cell
            for i in range(reps[gi], ends[gi]):
                if int(offsets[i]) > cell.fold_mark:
                    merged = update_cell(merged, int(times[i]), float(values[i]))
            if merged is cell:
                metrics.compute_time += time.perf_counter() - t0
                continue  # fully duplicate group: cell unchanged, skip the put
            merged = AggCell(
                merged.tag_id,
                merged.resolution,
                merged.bucket_start,
                merged.vmin,
                merged.vmax,
                merged.close,
                merged.close_ts,
                merged.count,
                max(cell.fold_mark, int(max_off[gi])),
            )
        metrics.compute_time += time.perf_counter() - t0

        t0 = time.perf_counter()
        store.upsert_agg(merged)
        metrics.write_time += time.perf_counter() - t0
        metrics.physical_puts += 1
    failpoint(f"agg_written_{res.name.lower()}")


class Pipeline:
    """Spout (filler) and bolt (drainer) threads for one partition."""

    def __init__(self, log, store, group, partition, max_queue, failpoint=_noop_failpoint):
        self.log = log
        self.store = store
        self.group = group
        self.partition = partition
        self.queue = AdaptiveQueue(max_queue)
        self.metrics = BoltMetrics()
        self.failpoint = failpoint
        self.killed = False
        self.error: Exception | None = None
        self._stop = threading.Event()
        self._filler = threading.Thread(target=self._fill_loop, daemon=True, name=f"spout-{partition}")
        self._drainer = threading.Thread(target=self._drain_loop, daemon=True, name=f"bolt-{partition}")

    def start(self) -> None:
        self._filler.start()
        self._drainer.start()

    def _fill_loop(self) -> None:
        pos: int | None = None
        try:
            while not self._stop.is_set():
                space = self.queue.wait_not_full(0.05)
                if space <= 0:
                    continue
                records = self.log.poll(self.group, self.partition, space, from_offset=pos)
                if not records:
                    wait_from = pos if pos is not None else self.log.committed_offset(self.group, self.partition)
                    self.log.wait_for_data(self.group, self.partition, wait_from, 0.05)
                    continue
                self.queue.put_many(records)
                pos = records[-1].offset + 1
        except Exception as exc:  # surfaced via the handle
            self.error = exc
            self._stop.set()

    def _drain_loop(self) -> None:
        try:
            while True:
                batch = self.queue.drain_all(timeout=0.05)
                if not batch:
                    if self._stop.is_set():
                        return
                    continue
                bolt_process(self.store, batch, self.metrics, self.failpoint)
                self.failpoint("commit")
                self.log.commit(self.group, self.partition, batch[-1].offset + 1)
        except PipelineKilled:
            self.killed = True
            self._stop.set()
        except Exception as exc:
            self.error = exc
            self._stop.set()

    def stop(self) -> None:
        self._stop.set()
        self.queue.wake_all()

    def join(self, timeout: float = 10.0) -> None:
        self._filler.join(timeout)
        self._drainer.join(timeout)


class Topology:
    """One pipeline per partition over a shared consumer group."""

    def __init__(
        self,
        log: MessageLog,
        store: TsdbStore,
        group: str = "agg",
        max_queue: int = 1000,
        failpoint=_noop_failpoint,
    ):
        self.log = log
        self.store = store
        self.group = group
        log.register_group(group)
        self.pipelines = [
            Pipeline(log, store, group, p, max_queue, failpoint)
            for p in range(log.partition_count)
        ]

    def start(self) -> "Topology":
        for p in self.pipelines:
            p.start()
        return self

    def stop(self) -> None:
        for p in self.pipelines:
            p.stop()
        for p in self.pipelines:
            p.join()

    def check(self) -> None:
        for p in self.pipelines:
            if p.error is not None:
                raise p.error

    @property
    def crashed(self) -> bool:
        return any(p.killed for p in self.pipelines)

    def metrics(self) -> BoltMetrics:
        total = BoltMetrics()
        for p in self.pipelines:
            total.merge(p.metrics)
        return total

    def total_lag(self) -> int:
        return self.log.lag(self.group)

    def drain(self, timeout: float = 30.0) -> bool:
        """Wait until every partition is fully committed (lag 0); returns
        early when every partition that still lags has a dead pipeline."""
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            self.check()
            lagging = [p for p in self.pipelines if self.log.lag(self.group, p.partition) > 0]
            if not lagging:
                return True
            if all(p.killed or p._stop.is_set() for p in lagging):
                return False
            time.sleep(0.005)
        return self.log.lag(self.group) == 0


def run_topology(log: MessageLog, store: TsdbStore, max_queue: int, group: str = "agg") -> Topology:
    return Topology(log, store, group=group, max_queue=max_queue).start()
