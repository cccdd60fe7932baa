import socket
import time

import pytest

from rtdap import wire
from rtdap.msglog import MessageLog
from rtdap.server import IngestServer
from rtdap.sim import (
    FloodConfig,
    IngestClient,
    SourceConfig,
    TagSpec,
    _flood_body,
    generate_records,
    run_flood,
    run_source,
)
from rtdap.store import TagDictionary


@pytest.fixture
def stack():
    log = MessageLog(partitions=4)
    dictionary = TagDictionary()
    server = IngestServer(log, dictionary, workers=2).start()
    yield log, dictionary, server
    server.stop(drain_timeout=2.0)


def wait_for(predicate, timeout=5.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(0.01)
    return predicate()


def all_records(log, n_partitions=4):
    out = []
    log.register_group("test-reader")
    for p in range(n_partitions):
        out.extend(log.poll("test-reader", p, 10_000_000, from_offset=0))
    return out


class TestServerBasics:
    def test_worker_count_validation(self):
        log = MessageLog(1)
        with pytest.raises(ValueError):
            IngestServer(log, TagDictionary(), workers=0)
        with pytest.raises(ValueError):
            IngestServer(log, TagDictionary(), workers=65)

    def test_bind_failure(self, stack):
        log, dictionary, server = stack
        from rtdap.server import BindFailed

        with pytest.raises(BindFailed):
            IngestServer(MessageLog(1), TagDictionary(), bind=("127.0.0.1", server.port)).start()

    def test_define_then_send(self, stack):
        log, dictionary, server = stack
        client = IngestClient(("127.0.0.1", server.port))
        sid = client.define("Z::g/d/OUT.PV")
        client.send(sid, 1_380_028_338_000, 24.75, 128)
        client.close()
        assert wait_for(lambda: server.stats().total_accepted == 1)
        records = all_records(log)
        assert len(records) == 1
        rec = records[0]
        assert (rec.time_ms, rec.kind, rec.value, rec.status) == (1_380_028_338_000, "F", 24.75, 128)
        assert dictionary.name_of(rec.tag_id) == "Z::g/d/OUT.PV"

    def test_unbound_stream_rejected_connection_stays_open(self, stack):
        log, dictionary, server = stack
        client = IngestClient(("127.0.0.1", server.port))
        client.send(99, 1000, 1.0)
        assert wait_for(lambda: server.stats().total_rejected == 1)
        sid = client.define("Z::g/d/OUT.PV")
        client.send(sid, 2000, 2.0)
        assert wait_for(lambda: server.stats().total_accepted == 1)
        client.close()

    def test_wrong_value_kind_rejected(self, stack):
        log, dictionary, server = stack
        client = IngestClient(("127.0.0.1", server.port))
        sid = client.define("Z::g/d/STATE", kind="B")
        client.send(sid, 1000, 12.5)  # number on a boolean stream
        client.send(sid, 2000, True)
        client.close()
        assert wait_for(lambda: server.stats().total_accepted == 1)
        assert server.stats().total_rejected == 1
        rec = all_records(log)[0]
        assert (rec.kind, rec.value) == ("B", True)

    def test_integer_stream_accepts_ints_rejects_floats(self, stack):
        log, dictionary, server = stack
        client = IngestClient(("127.0.0.1", server.port))
        sid = client.define("Z::g/d/COUNT", kind="I")
        client.send(sid, 1000, 41)
        client.send(sid, 2000, 1.5)
        client.close()
        assert wait_for(lambda: server.stats().total_accepted == 1)
        assert server.stats().total_rejected == 1
        rec = all_records(log)[0]
        assert (rec.kind, rec.value) == ("I", 41)

    def test_idempotent_redefinition(self, stack):
        log, dictionary, server = stack
        client = IngestClient(("127.0.0.1", server.port))
        body = wire.encode_request(wire.StreamDefinition(7, "Z::g/d/OUT.PV", "F"))
        client.sock.sendall(wire.write_frame(body) * 2)
        client.send(7, 1000, 1.0)
        client.close()
        assert wait_for(lambda: server.stats().total_accepted == 1)
        assert server.stats().definitions_accepted == 2

    def test_stream_id_conflict_keeps_original_binding(self, stack):
        log, dictionary, server = stack
        client = IngestClient(("127.0.0.1", server.port))
        client.sock.sendall(
            wire.write_frame(wire.encode_request(wire.StreamDefinition(7, "Z::g/a/OUT.PV", "F")))
            + wire.write_frame(wire.encode_request(wire.StreamDefinition(7, "Z::g/b/OUT.PV", "F")))
        )
        client.send(7, 1000, 1.0)
        client.close()
        assert wait_for(lambda: server.stats().total_accepted == 1)
        assert server.stats().definitions_rejected == 1
        rec = all_records(log)[0]
        assert dictionary.name_of(rec.tag_id) == "Z::g/a/OUT.PV"

    def test_malformed_tag_definition_counted(self, stack):
        log, dictionary, server = stack
        client = IngestClient(("127.0.0.1", server.port))
        client.sock.sendall(wire.write_frame(wire.encode_request(wire.StreamDefinition(7, "no-separator", "F"))))
        client.close()
        assert wait_for(lambda: server.stats().definitions_rejected == 1)

    def test_bindings_are_connection_scoped(self, stack):
        log, dictionary, server = stack
        c1 = IngestClient(("127.0.0.1", server.port))
        c2 = IngestClient(("127.0.0.1", server.port))
        c1.send(c1.define("Z::g/one/OUT.PV"), 1000, 1.0)
        c2.send(c2.define("Z::g/two/OUT.PV"), 1000, 2.0)  # same stream id 1
        c1.close()
        c2.close()
        assert wait_for(lambda: server.stats().total_accepted == 2)
        by_tag = {dictionary.name_of(r.tag_id): r.value for r in all_records(log)}
        assert by_tag == {"Z::g/one/OUT.PV": 1.0, "Z::g/two/OUT.PV": 2.0}

    def test_deflate_data_records(self, stack):
        log, dictionary, server = stack
        client = IngestClient(("127.0.0.1", server.port))
        sid = client.define("Z::g/d/OUT.PV")
        for i in range(10):
            client.send(sid, 1000 + i, float(i), encoding="deflate")
        client.close()
        assert wait_for(lambda: server.stats().total_accepted == 10)
        assert [r.value for r in all_records(log)] == [float(i) for i in range(10)]

    def test_bad_json_rejected_connection_survives(self, stack):
        log, dictionary, server = stack
        client = IngestClient(("127.0.0.1", server.port))
        client.sock.sendall(wire.write_frame(b"{not json"))
        sid = client.define("Z::g/d/OUT.PV")
        client.send(sid, 1000, 5.0)
        client.close()
        assert wait_for(lambda: server.stats().total_accepted == 1)
        assert server.stats().total_rejected == 1

    def test_bad_flag_closes_connection(self, stack):
        log, dictionary, server = stack
        sock = socket.create_connection(("127.0.0.1", server.port))
        sock.sendall(b"\x09\x00\x00\x00\x01x")
        assert wait_for(lambda: server.stats().active_connections == 0)
        sock.close()

    def test_per_connection_order_preserved(self, stack):
        log, dictionary, server = stack
        client = IngestClient(("127.0.0.1", server.port))
        sid = client.define("Z::g/d/OUT.PV")
        frames = b"".join(
            wire.write_frame(wire.encode_request(wire.DataRecord(sid, 1000 + i, float(i), 0)))
            for i in range(5000)
        )
        client.sock.sendall(frames)
        client.close()
        assert wait_for(lambda: server.stats().total_accepted == 5000)
        values = [r.value for r in all_records(log)]
        assert values == [float(i) for i in range(5000)]

    def test_graceful_shutdown_drains_inflight(self):
        log = MessageLog(partitions=2)
        server = IngestServer(log, TagDictionary(), workers=2).start()
        client = IngestClient(("127.0.0.1", server.port))
        sid = client.define("Z::g/d/OUT.PV")
        n = 20_000
        blob = b"".join(
            wire.write_frame(wire.encode_request(wire.DataRecord(sid, 1 + i, 0.5, 0))) for i in range(n)
        )
        client.sock.sendall(blob)
        client.close()
        server.stop(drain_timeout=10.0)
        assert server.stats().total_accepted == n

    def test_seven_concurrent_connections(self, stack):
        log, dictionary, server = stack
        clients = [IngestClient(("127.0.0.1", server.port)) for _ in range(7)]
        for i, c in enumerate(clients):
            c.send(c.define(f"Z::g/d{i}/OUT.PV"), 1000, float(i))
        assert wait_for(lambda: server.stats().total_accepted == 7)
        assert server.stats().connections_total == 7
        for c in clients:
            c.close()

    def test_max_frame_limit_closes_connection(self):
        log = MessageLog(1)
        server = IngestServer(log, TagDictionary(), workers=1, max_frame=128).start()
        sock = socket.create_connection(("127.0.0.1", server.port))
        sock.sendall(wire.write_frame(b"x" * 200))
        assert wait_for(lambda: server.stats().active_connections == 0)
        sock.close()
        server.stop(drain_timeout=1.0)


class TestSimulator:
    def test_end_to_end_count(self, stack):
        log, dictionary, server = stack
        cfg = SourceConfig(
            tags=[TagSpec("SIM::u/a/OUT.PV"), TagSpec("SIM::u/b/OUT.PV")],
            rate_per_tag=10.0,
            duration_s=10.0,
            seed=3,
        )
        report = run_source(cfg, ("127.0.0.1", server.port))
        assert report.sent == 200
        assert wait_for(lambda: server.stats().total_accepted == 200)
        assert not report.connection_lost

    def test_same_seed_identical_sequences(self):
        cfg = SourceConfig(
            tags=[TagSpec("S::a/w", waveform="randomWalk", amplitude=0.5, baseline=10.0)],
            rate_per_tag=5.0,
            duration_s=4.0,
            seed=42,
        )
        a = list(generate_records(cfg))
        b = list(generate_records(cfg))
        assert a == b

    def test_different_seed_differs(self):
        base = dict(
            tags=[TagSpec("S::a/w", waveform="randomWalk", amplitude=0.5)],
            rate_per_tag=5.0,
            duration_s=4.0,
        )
        a = list(generate_records(SourceConfig(seed=1, **base)))
        b = list(generate_records(SourceConfig(seed=2, **base)))
        assert a != b

    def test_constant_waveform_values(self):
        cfg = SourceConfig(tags=[TagSpec("S::a/c", waveform="constant", baseline=7.5)], rate_per_tag=2.0, duration_s=3.0)
        values = {v for _, _, v in generate_records(cfg)}
        assert values == {7.5}

    def test_logical_clock_timestamps(self):
        cfg = SourceConfig(tags=[TagSpec("S::a/c")], rate_per_tag=4.0, duration_s=2.0, start_ms=1000)
        times = [t for _, t, _ in generate_records(cfg)]
        assert times == [1000, 1250, 1500, 1750, 2000, 2250, 2500, 2750]

    def test_unknown_waveform_rejected(self):
        with pytest.raises(ValueError):
            TagSpec("S::a/x", waveform="square")

    def test_wall_clock_rate_within_5_percent(self, stack):
        log, dictionary, server = stack
        cfg = SourceConfig(
            tags=[TagSpec("SIM::u/paced/OUT.PV")],
            rate_per_tag=50.0,
            duration_s=2.0,
            logical_clock=False,
        )
        t0 = time.monotonic()
        report = run_source(cfg, ("127.0.0.1", server.port))
        elapsed = time.monotonic() - t0
        assert report.sent == 100
        achieved = report.sent / elapsed
        assert abs(achieved - 50.0) / 50.0 <= 0.05


class TestFlood:
    def test_zero_duration_empty_report(self):
        report = run_flood(FloodConfig(duration_s=0.0), ("127.0.0.1", 1))
        assert report.sent == 0 and not report.connection_lost

    def test_payload_bounds(self):
        with pytest.raises(ValueError):
            FloodConfig(payload_bytes=1)
        with pytest.raises(ValueError):
            FloodConfig(payload_bytes=600_000)

    def test_flood_body_is_decodable_and_sized(self):
        for size in (70, 512, 8192, 65_536):
            body = _flood_body(FloodConfig(payload_bytes=size), 1)
            assert abs(len(body) - size) <= 1 or size < 80
            rec = wire.decode_request(body)
            assert isinstance(rec, wire.DataRecord)

    def test_flood_against_server(self, stack):
        log, dictionary, server = stack
        cfg = FloodConfig(connections=2, payload_bytes=70, duration_s=0.5, seed=1)
        report = run_flood(cfg, ("127.0.0.1", server.port))
        assert report.sent > 0
        assert wait_for(lambda: server.stats().total_accepted > 0)

    def test_bandwidth_cap_limits_rate(self, stack):
        log, dictionary, server = stack
        cfg = FloodConfig(
            connections=1, payload_bytes=1024, duration_s=1.0, bandwidth_cap_bps=2_000_000
        )
        report = run_flood(cfg, ("127.0.0.1", server.port))
        # 2 Mbit/s over ~1 KB frames is ~240 frames/s; allow broad headroom
        assert report.steady_bytes_per_s < 2_000_000 / 8 * 1.5
