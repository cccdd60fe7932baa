"""Data sources for tests, demos and benchmarks.

``run_source`` emits configured waveforms per tag over the streaming
protocol, either paced on the wall clock or on a logical clock
(timestamps advance by 1/rate per record) for fully deterministic runs.
``run_flood`` saturates connections with a fixed-size data-record frame
to measure server throughput; an optional token-bucket bandwidth cap
recreates a network-bottleneck regime on loopback.
"""

from __future__ import annotations

import json
import math
import random
import socket
import threading
import time
import zlib
from dataclasses import dataclass, field

from . import wire


@dataclass(frozen=True)
class TagSpec:
    tag: str
    waveform: str = "sine"  # sine | ramp | randomWalk | constant
    amplitude: float = 1.0
    period_s: float = 60.0
    baseline: float = 0.0

    def __post_init__(self):
        if self.waveform not in ("sine", "ramp", "randomWalk", "constant"):
            raise ValueError(f"unknown waveform {self.waveform!r}")


@dataclass
class SourceConfig:
    tags: list[TagSpec]
    rate_per_tag: float = 1.0
    duration_s: float = 10.0
    seed: int = 0
    logical_clock: bool = True
    start_ms: int = 1_380_024_000_000
    status: int = 0

    @classmethod
    def from_json(cls, text: str) -> "SourceConfig":
        raw = json.loads(text)
        tags = [TagSpec(**t) for t in raw.pop("tags")]
        return cls(tags=tags, **raw)


@dataclass
class SourceReport:
    sent: int = 0
    per_tag: dict[str, int] = field(default_factory=dict)
    connection_lost: bool = False


class _Waveform:
    def __init__(self, spec: TagSpec, seed: int):
        self.spec = spec
        self.rng = random.Random((seed << 32) ^ zlib.crc32(spec.tag.encode("utf-8")))
        self.walk = spec.baseline

    def value_at(self, t_ms: int, start_ms: int) -> float:
        s = self.spec
        if s.waveform == "constant":
            return s.baseline
        phase = (t_ms - start_ms) / (s.period_s * 1000.0)
        if s.waveform == "sine":
            return s.baseline + s.amplitude * math.sin(2.0 * math.pi * phase)
        if s.waveform == "ramp":
            return s.baseline + s.amplitude * (phase - math.floor(phase))
        self.walk += self.rng.uniform(-s.amplitude, s.amplitude)
        return self.walk


def generate_records(cfg: SourceConfig):
    """Deterministic record stream: (tag_index, time_ms, value), in time
    order across tags. Timestamps step by 1000/rate per tag."""
    waves = [_Waveform(t, cfg.seed) for t in cfg.tags]
    step_ms = 1000.0 / cfg.rate_per_tag
    n_per_tag = int(cfg.duration_s * cfg.rate_per_tag)
    for i in range(n_per_tag):
        t_ms = cfg.start_ms + int(round(i * step_ms))
        for ti, wave in enumerate(waves):
            yield ti, t_ms, wave.value_at(t_ms, cfg.start_ms)


def run_source(cfg: SourceConfig, target: tuple[str, int]) -> SourceReport:
    """Define one stream per tag, then emit records; values are
    reproducible for a given (config, seed)."""
    report = SourceReport(per_tag={t.tag: 0 for t in cfg.tags})
    sock = socket.create_connection(target)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    try:
        defs = b"".join(
            wire.write_frame(wire.encode_request(wire.StreamDefinition(ti + 1, t.tag, "F")))
            for ti, t in enumerate(cfg.tags)
        )
        sock.sendall(defs)
        step_s = 1.0 / (cfg.rate_per_tag * max(len(cfg.tags), 1))
        pending: list[bytes] = []
        started = time.monotonic()
        emitted = 0
        for ti, t_ms, value in generate_records(cfg):
            body = wire.encode_request(wire.DataRecord(ti + 1, t_ms, value, cfg.status))
            pending.append(wire.write_frame(body))
            report.per_tag[cfg.tags[ti].tag] += 1
            report.sent += 1
            emitted += 1
            if len(pending) >= 500:
                sock.sendall(b"".join(pending))
                pending.clear()
            if not cfg.logical_clock:
                lag = started + emitted * step_s - time.monotonic()
                if lag > 0.001:
                    if pending:
                        sock.sendall(b"".join(pending))
                        pending.clear()
                    time.sleep(lag)
        if pending:
            sock.sendall(b"".join(pending))
    except (BrokenPipeError, ConnectionResetError):
        report.connection_lost = True
    finally:
        sock.close()
    return report


class IngestClient:
    """Minimal streaming-protocol client: define streams, emit records."""

    def __init__(self, target: tuple[str, int]):
        self.sock = socket.create_connection(target)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._next_id = 1
        self._streams: dict[str, int] = {}

    def define(self, tag: str, kind: str = "F", encoding: str = "none") -> int:
        if tag in self._streams:
            return self._streams[tag]
        stream_id = self._next_id
        self._next_id += 1
        body = wire.encode_request(wire.StreamDefinition(stream_id, tag, kind, encoding))
        self.sock.sendall(wire.write_frame(body))
        self._streams[tag] = stream_id
        return stream_id

    def send(self, stream_id: int, time_ms: int, value, status: int = 0, encoding: str = "none") -> None:
        body = wire.encode_request(wire.DataRecord(stream_id, time_ms, value, status))
        self.sock.sendall(wire.write_frame(body, encoding))

    def send_tag(self, tag: str, time_ms: int, value, status: int = 0) -> None:
        self.send(self.define(tag), time_ms, value, status)

    def close(self) -> None:
        self.sock.close()


@dataclass
class FloodConfig:
    connections: int = 1
    payload_bytes: int = 70
    encoding: str = "none"  # none | deflate
    duration_s: float = 5.0
    seed: int = 0
    bandwidth_cap_bps: float = 0.0  # 0 disables the cap
    tag_prefix: str = "FLOOD::gen"

    def __post_init__(self):
        if not 2 <= self.payload_bytes <= 524_288:
            raise ValueError("payload_bytes must be in 2..524288")
        if self.encoding not in ("none", "deflate"):
            raise ValueError(f"unknown encoding {self.encoding!r}")


@dataclass
class FloodReport:
    sent: int = 0
    bytes_sent: int = 0
    duration_s: float = 0.0
    steady_records_per_s: float = 0.0
    steady_bytes_per_s: float = 0.0
    connection_lost: bool = False


def _flood_body(cfg: FloodConfig, stream_id: int) -> str:
    """A data-record body padded (via an ignored extra field) to the target
    payload size; the pad is seeded and compresses well."""
    base = {
        "type": "d",
        "parameter": {"id": stream_id, "time": 1_380_024_000_000, "value": 24.75, "status": 128},
    }
    skeleton = json.dumps(base, separators=(",", ":"))
    room = cfg.payload_bytes - len(skeleton)
    if room <= len(',"pad":""') + 1:
        return skeleton
    rng = random.Random(cfg.seed + stream_id)
    motif = "".join(rng.choice("0123456789abcdef") for _ in range(32))
    pad_len = room - len(',"pad":""')
    reps = pad_len // len(motif) + 1
    pad = (motif * reps)[:pad_len]
    base["parameter"]["pad"] = pad
    return json.dumps(base, separators=(",", ":"))


class _TokenBucket:
    """Deficit-style limiter: consumption may overdraw the bucket and the
    caller sleeps the debt off, so requests larger than the burst size
    still pace correctly."""

    def __init__(self, rate_bps: float):
        self.rate = rate_bps / 8.0  # bytes per second
        self.burst = self.rate / 10.0
        self.available = self.burst / 2.0
        self.last = time.monotonic()

    def consume(self, nbytes: int) -> None:
        now = time.monotonic()
        self.available = min(self.available + (now - self.last) * self.rate, self.burst)
        self.last = now
        self.available -= nbytes
        if self.available < 0:
            time.sleep(-self.available / self.rate)


def run_flood(cfg: FloodConfig, target: tuple[str, int]) -> FloodReport:
    """Send a prebuilt frame at maximum speed on each connection; the
    steady-state rate excludes the first 10% of the run."""
    report = FloodReport()
    if cfg.duration_s <= 0:
        return report
    lock = threading.Lock()
    counters = {"sent": 0, "bytes": 0, "steady_sent": 0, "steady_bytes": 0, "lost": 0}
    warmup_until = time.monotonic() + cfg.duration_s * 0.10
    stop_at = time.monotonic() + cfg.duration_s
    per_conn_cap = cfg.bandwidth_cap_bps / cfg.connections if cfg.bandwidth_cap_bps else 0.0

    def worker(conn_index: int) -> None:
        stream_id = conn_index + 1
        body = _flood_body(cfg, stream_id)
        frame = wire.write_frame(body, cfg.encoding)
        tag = f"{cfg.tag_prefix}/conn{conn_index}/OUT.PV"
        defn = wire.write_frame(wire.encode_request(wire.StreamDefinition(stream_id, tag, "F")))
        # Batch frames per sendall so the client stays cheap.
        per_send = max(1, min(500, 65_536 // len(frame)))
        blob = frame * per_send
        bucket = _TokenBucket(per_conn_cap) if per_conn_cap else None
        sent = nbytes = steady_sent = steady_bytes = 0
        try:
            sock = socket.create_connection(target)
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            sock.sendall(defn)
            while time.monotonic() < stop_at:
                if bucket is not None:
                    bucket.consume(len(blob))
                sock.sendall(blob)
                sent += per_send
                nbytes += len(blob)
                if time.monotonic() >= warmup_until:
                    steady_sent += per_send
                    steady_bytes += len(blob)
            sock.close()
        except OSError:
            with lock:
                counters["lost"] += 1
        with lock:
            counters["sent"] += sent
            counters["bytes"] += nbytes
            counters["steady_sent"] += steady_sent
            counters["steady_bytes"] += steady_bytes

    threads = [threading.Thread(target=worker, args=(i,), daemon=True) for i in range(cfg.connections)]
    t0 = time.monotonic()
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    elapsed = time.monotonic() - t0
    steady_window = max(cfg.duration_s * 0.90, 1e-9)
    report.sent = counters["sent"]
    report.bytes_sent = counters["bytes"]
    report.duration_s = elapsed
    report.steady_records_per_s = counters["steady_sent"] / steady_window
    report.steady_bytes_per_s = counters["steady_bytes"] / steady_window
    report.connection_lost = counters["lost"] > 0
    return report
