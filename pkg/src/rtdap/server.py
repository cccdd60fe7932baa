"""TCP portal server: accepts framed JSON requests, maintains per-connection
stream bindings, and appends accepted records to the message log.

Connections are distributed round-robin over N event-loop worker threads;
one worker owns a connection for its lifetime, so frames are processed in
arrival order. The hot path hands whole receive buffers to the kernel
scanner (GIL-released when compiled) and appends float batches to the log
columnar; definitions, compressed frames and non-numeric payloads take the
slow path. The server never writes responses: errors are counted and
exposed through stats (fire-and-forget telemetry).
"""

from __future__ import annotations

import os
import selectors
import socket
import threading
import time
import zlib
from dataclasses import dataclass

import numpy as np

from . import kernels, wire
from .model import MalformedTag, parse_tag
from .msglog import MessageLog
from .store import TagDictionary

RECV_BYTES = 262_144


class BindFailed(OSError):
    pass


class StreamIdConflict(ValueError):
    pass


@dataclass
class IngestStats:
    active_connections: int = 0
    total_accepted: int = 0
    total_rejected: int = 0
    definitions_accepted: int = 0
    definitions_rejected: int = 0
    connections_total: int = 0
    records_per_second: float = 0.0


class _Session:
    __slots__ = ("sock", "buf", "bindings", "accepted", "rejected", "conn_id")

    def __init__(self, sock, conn_id: int):
        self.sock = sock
        self.conn_id = conn_id
        self.buf = bytearray()
        self.bindings: dict[int, tuple[int, str]] = {}
        self.accepted = 0
        self.rejected = 0


class IngestServer:
    def __init__(
        self,
        log: MessageLog,
        dictionary: TagDictionary,
        bind: tuple[str, int] = ("127.0.0.1", 0),
        workers: int = 1,
        max_frame: int = wire.MAX_PAYLOAD_BYTES,
    ):
        if not 1 <= workers <= 64:
            raise ValueError(f"workers must be in 1..64, got {workers}")
        if not 0 < max_frame <= wire.MAX_PAYLOAD_BYTES:
            raise ValueError(f"max_frame must be in 1..{wire.MAX_PAYLOAD_BYTES}")
        self.log = log
        self.dictionary = dictionary
        self.configured_workers = workers
        # event loops are CPU-bound parsers: threads beyond the core count
        # only add context switching, so the config is an upper bound
        self.workers = min(workers, os.cpu_count() or workers)
        self.max_frame = max_frame
        self._bind = bind
        self._listener: socket.socket | None = None
        self._acceptor: threading.Thread | None = None
        self._worker_threads: list[_Worker] = []
        self._stop = threading.Event()
        self._accepting = threading.Event()
        self._lock = threading.Lock()
        self._accepted = 0
        self._rejected = 0
        self._defs_ok = 0
        self._defs_bad = 0
        self._conns = 0
        self._active = 0
        self._next_conn = 0
        self._rate_mark = (time.monotonic(), 0)

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> "IngestServer":
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            listener.bind(self._bind)
        except OSError as exc:
            listener.close()
            raise BindFailed(str(exc)) from None
        listener.listen(128)
        self._listener = listener
        self._worker_threads = [_Worker(self, i) for i in range(self.workers)]
        for w in self._worker_threads:
            w.start()
        self._accepting.set()
        self._acceptor = threading.Thread(target=self._accept_loop, daemon=True, name="ingest-accept")
        self._acceptor.start()
        return self

    @property
    def port(self) -> int:
        return self._listener.getsockname()[1]

    @property
    def address(self) -> tuple[str, int]:
        return self._listener.getsockname()[:2]

    def _accept_loop(self) -> None:
        self._listener.settimeout(0.1)
        while self._accepting.is_set():
            try:
                sock, _addr = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            sock.setblocking(False)
            with self._lock:
                conn_id = self._next_conn
                self._next_conn += 1
                self._conns += 1
                self._active += 1
            worker = self._worker_threads[conn_id % self.workers]
            worker.adopt(_Session(sock, conn_id))

    def stop(self, drain_timeout: float = 5.0) -> None:
        """Stop accepting, drain buffered frames of closing connections,
        then shut the workers down."""
        self._accepting.clear()
        if self._listener is not None:
            self._listener.close()
        deadline = time.monotonic() + drain_timeout
        while time.monotonic() < deadline:
            if all(w.idle() for w in self._worker_threads):
                break
            time.sleep(0.02)
        self._stop.set()
        for w in self._worker_threads:
            w.join(timeout=2.0)
        if self._acceptor is not None:
            self._acceptor.join(timeout=2.0)

    # -- stats ----------------------------------------------------------------

    def _count(self, accepted: int = 0, rejected: int = 0, defs_ok: int = 0, defs_bad: int = 0) -> None:
        with self._lock:
            self._accepted += accepted
            self._rejected += rejected
            self._defs_ok += defs_ok
            self._defs_bad += defs_bad

    def _conn_closed(self) -> None:
        with self._lock:
            self._active -= 1

    def stats(self) -> IngestStats:
        with self._lock:
            now = time.monotonic()
            mark_t, mark_n = self._rate_mark
            rate = (self._accepted - mark_n) / (now - mark_t) if now > mark_t else 0.0
            self._rate_mark = (now, self._accepted)
            return IngestStats(
                active_connections=self._active,
                total_accepted=self._accepted,
                total_rejected=self._rejected,
                definitions_accepted=self._defs_ok,
                definitions_rejected=self._defs_bad,
                connections_total=self._conns,
                records_per_second=rate,
            )

    # -- request handling ------------------------------------------------------

    def process_buffer(self, sess: _Session) -> bool:
        """Scan and handle everything complete in the session buffer.
        Returns False when the connection must be closed (framing error)."""
        out = kernels.scan_frames(sess.buf, 0, self.max_frame)
        prev = 0
        ok = True
        for fast_pos, flag, payload in out.slow:
            if fast_pos > prev:
                self._handle_fast(sess, out, prev, fast_pos)
            prev = fast_pos
            if not self._handle_slow(sess, flag, payload):
                ok = False
                break
        if ok and out.count > prev:
            self._handle_fast(sess, out, prev, out.count)
        if out.consumed:
            del sess.buf[: out.consumed]
        if out.error:
            return False
        return ok

    def _handle_fast(self, sess: _Session, out, lo: int, hi: int) -> None:
        ids = out.ids[lo:hi]
        uniq, inverse = np.unique(ids, return_inverse=True)
        tag_for = np.zeros(len(uniq), dtype=np.uint32)
        slow_streams: dict[int, tuple[int, str]] = {}
        for ui in range(len(uniq)):
            binding = sess.bindings.get(int(uniq[ui]))
            if binding is None:
                continue
            if binding[1] == "F":
                tag_for[ui] = binding[0]
            else:
                slow_streams[ui] = binding
        tags = tag_for[inverse]
        mask = tags != 0
        n_fast = int(mask.sum())
        if n_fast:
            self.log.append_float_batch(
                tags[mask],
                out.times[lo:hi][mask],
                out.values[lo:hi][mask],
                out.statuses[lo:hi][mask],
            )
        accepted = n_fast
        rejected = 0
        if slow_streams:
            acc2, rej2 = self._handle_fast_nonfloat(sess, out, lo, hi, inverse, slow_streams)
            accepted += acc2
            rejected += rej2
        rejected += (hi - lo) - n_fast - sum(
            int((inverse == ui).sum()) for ui in slow_streams
        )
        sess.accepted += accepted
        sess.rejected += rejected
        self._count(accepted=accepted, rejected=rejected)

    def _handle_fast_nonfloat(self, sess, out, lo, hi, inverse, slow_streams) -> tuple[int, int]:
        """Numeric records bound to I/B/S streams: I accepts integers,
        B and S reject numerics (WrongValueKind)."""
        accepted = rejected = 0
        rows = []
        for i in range(hi - lo):
            ui = int(inverse[i])
            if ui not in slow_streams:
                continue
            tag_id, kind = slow_streams[ui]
            if kind == "I" and out.is_int[lo + i]:
                rows.append((tag_id, int(out.times[lo + i]), "I", int(out.ivalues[lo + i]), int(out.statuses[lo + i])))
                accepted += 1
            else:
                rejected += 1
        if rows:
            self.log.append_batch(rows)
        return accepted, rejected

    def _handle_slow(self, sess: _Session, flag: int, payload: bytes) -> bool:
        if flag == wire.FLAG_DEFLATE:
            try:
                body = zlib.decompress(payload, bufsize=min(len(payload) * 4 + 64, wire.MAX_BODY_BYTES))
            except zlib.error:
                return False  # corrupt stream: close the connection
            if len(body) > wire.MAX_BODY_BYTES:
                return False
            parsed = kernels.parse_record_body(body)
            if parsed is not None:
                self._handle_single_numeric(sess, *parsed)
                return True
        else:
            body = payload
        try:
            req = wire.decode_request(body)
        except wire.WireError:
            sess.rejected += 1
            self._count(rejected=1)
            return True
        if isinstance(req, wire.StreamDefinition):
            self._on_stream_definition(sess, req)
        else:
            self._on_data_record(sess, req)
        return True

    def _handle_single_numeric(self, sess, stream_id, time_ms, fval, ival, is_int, status) -> None:
        binding = sess.bindings.get(stream_id)
        if binding is None:
            sess.rejected += 1
            self._count(rejected=1)
            return
        tag_id, kind = binding
        if kind == "F":
            self.log.append(tag_id, int(time_ms), "F", float(fval), int(status))
        elif kind == "I" and is_int:
            self.log.append(tag_id, int(time_ms), "I", int(ival), int(status))
        else:
            sess.rejected += 1
            self._count(rejected=1)
            return
        sess.accepted += 1
        self._count(accepted=1)

    def _on_stream_definition(self, sess: _Session, d: wire.StreamDefinition) -> None:
        try:
            tag = parse_tag(d.tag)
        except MalformedTag:
            self._count(defs_bad=1)
            return
        tag_id = self.dictionary.register(tag)
        existing = sess.bindings.get(d.stream_id)
        if existing is not None:
            if existing == (tag_id, d.value_kind):
                self._count(defs_ok=1)  # idempotent redefinition
            else:
                self._count(defs_bad=1)  # StreamIdConflict: binding kept
            return
        sess.bindings[d.stream_id] = (tag_id, d.value_kind)
        self._count(defs_ok=1)

    def _on_data_record(self, sess: _Session, rec: wire.DataRecord) -> None:
        binding = sess.bindings.get(rec.stream_id)
        if binding is None:
            sess.rejected += 1
            self._count(rejected=1)
            return
        tag_id, kind = binding
        try:
            value = wire.coerce_value(kind, rec.value)
        except wire.WrongValueKind:
            sess.rejected += 1
            self._count(rejected=1)
            return
        self.log.append(tag_id, rec.time_ms, kind, value, rec.status)
        sess.accepted += 1
        self._count(accepted=1)


class _Worker(threading.Thread):
    def __init__(self, server: IngestServer, index: int):
        super().__init__(daemon=True, name=f"ingest-worker-{index}")
        self.server = server
        self.selector = selectors.DefaultSelector()
        self._incoming: list[_Session] = []
        self._incoming_lock = threading.Lock()
        self._n_conns = 0

    def adopt(self, sess: _Session) -> None:
        with self._incoming_lock:
            self._incoming.append(sess)

    def idle(self) -> bool:
        with self._incoming_lock:
            pending = bool(self._incoming)
        return not pending and self._n_conns == 0

    def run(self) -> None:
        stop = self.server._stop
        while not stop.is_set():
            with self._incoming_lock:
                newcomers, self._incoming = self._incoming, []
            for sess in newcomers:
                self.selector.register(sess.sock, selectors.EVENT_READ, sess)
                self._n_conns += 1
            events = self.selector.select(timeout=0.05)
            for key, _mask in events:
                sess: _Session = key.data
                try:
                    data = sess.sock.recv(RECV_BYTES)
                except (BlockingIOError, InterruptedError):
                    continue
                except OSError:
                    data = b""
                if data:
                    sess.buf += data
                    if not self.server.process_buffer(sess):
                        self._drop(sess)
                else:
                    # EOF: whatever was complete has already been handled
                    self._drop(sess)
        for key in list(self.selector.get_map().values()):
            self._drop(key.data)
        self.selector.close()

    def _drop(self, sess: _Session) -> None:
        try:
            self.selector.unregister(sess.sock)
        except (KeyError, ValueError):
            return
        self._n_conns -= 1
        try:
            sess.sock.close()
        finally:
            self.server._conn_closed()


def serve(
    log: MessageLog,
    dictionary: TagDictionary,
    bind: tuple[str, int] = ("127.0.0.1", 0),
    worker_threads: int = 1,
    max_frame: int = wire.MAX_PAYLOAD_BYTES,
) -> IngestServer:
    """Start an ingest server; returns the running handle."""
    return IngestServer(log, dictionary, bind=bind, workers=worker_threads, max_frame=max_frame).start()
