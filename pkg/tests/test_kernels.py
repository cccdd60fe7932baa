import random

import numpy as np
import pytest

from rtdap import kernels, wire
from rtdap.wire import DataRecord, StreamDefinition, encode_request, write_frame


pytestmark = pytest.mark.skipif(
    not kernels.HAVE_NATIVE, reason="compiled kernels unavailable; pure lane is the only lane"
)

from rtdap import _ckernels  # noqa: E402


def frames_blob(requests, encodings=None):
    out = b""
    for i, req in enumerate(requests):
        enc = encodings[i] if encodings else "none"
        out += write_frame(encode_request(req), enc)
    return out


def assert_scans_match(blob, max_payload=wire.MAX_PAYLOAD_BYTES):
    """Both lanes must agree on the *reconstructed record stream*, errors
    and consumed bytes; the fast/slow split may differ."""
    a = _ckernels.scan_frames(blob, 0, max_payload)
    b = kernels.pure_scan_frames(blob, 0, max_payload)
    assert a.error == b.error
    assert a.consumed == b.consumed

    def fast_entry(i, t, v, iv, ii, s):
        # repr() keeps NaN comparable and -0.0 distinct from 0.0
        return ("fast", int(i), int(t), repr(float(v)), int(iv), int(ii), int(s))

    def reconstruct(out):
        merged = []
        fast = list(
            zip(
                out.ids[: out.count],
                out.times[: out.count],
                out.values[: out.count],
                out.ivalues[: out.count],
                out.is_int[: out.count],
                out.statuses[: out.count],
            )
        )
        prev = 0
        for pos, flag, payload in out.slow:
            merged.extend(fast_entry(*entry) for entry in fast[prev:pos])
            merged.append(("slow", flag, payload))
            prev = pos
        merged.extend(fast_entry(*entry) for entry in fast[prev:])
        return merged

    def normalize(stream):
        # A slow frame that the authoritative decoder accepts as a numeric
        # data record is equivalent to a fast entry.
        norm = []
        for item in stream:
            if item[0] == "fast":
                norm.append(item)
                continue
            _, flag, payload = item
            if flag == wire.FLAG_RAW:
                parsed = kernels.pure_parse_record_body(payload)
                if parsed is not None:
                    norm.append(fast_entry(*parsed))
                    continue
            norm.append(item)
        return norm

    assert normalize(reconstruct(a)) == normalize(reconstruct(b))


class TestScanDifferential:
    def test_plain_records(self):
        reqs = [DataRecord(i, 1000 + i, i * 1.5, i % 256) for i in range(1, 300)]
        assert_scans_match(frames_blob(reqs))

    def test_mixed_requests_and_encodings(self):
        rng = random.Random(21)
        reqs, encs = [], []
        for i in range(200):
            roll = rng.random()
            if roll < 0.2:
                reqs.append(StreamDefinition(i, f"Z::g/d{i}/OUT.PV", rng.choice("FIBS")))
            elif roll < 0.4:
                reqs.append(DataRecord(i, 10 + i, rng.choice([True, False, "text", -7]), 1))
            else:
                reqs.append(DataRecord(i, 10 + i, rng.uniform(-1e9, 1e9), rng.randrange(256)))
            encs.append(rng.choice(["none", "none", "none", "deflate"]))
        assert_scans_match(frames_blob(reqs, encs))

    def test_number_forms(self):
        bodies = [
            '{"type":"d","parameter":{"id":1,"time":5,"value":1e3,"status":0}}',
            '{"type":"d","parameter":{"id":1,"time":5,"value":-2.5E-2}}',
            '{"type":"d","parameter":{"id":1,"time":5,"value":0.125}}',
            '{"type":"d","parameter":{"id":1,"time":5,"value":9007199254740993}}',  # > 2^53
            '{"type":"d","parameter":{"id":1,"time":5,"value":0}}',
            '{"type":"d","parameter":{"id":1,"time":5,"value":-0.0}}',
            '{"type":"d","parameter":{"id":4294967295,"time":5,"value":1}}',
            '{"type":"d","parameter":{"id":4294967296,"time":5,"value":1}}',  # id > u32
            '{"type":"d","parameter":{"id":1,"time":18446744073709551615,"value":1}}',
        ]
        blob = b"".join(write_frame(b) for b in bodies)
        assert_scans_match(blob)

    def test_whitespace_and_key_order(self):
        bodies = [
            ' {"parameter": {"time": 7, "value": 3.5, "id": 2} , "type": "d"} ',
            '{"type":"d","extra":true,"parameter":{"status":9,"value":-1,"time":3,"id":8,"x":null}}',
            '{"type" : "d","parameter":{"id":1,"time":1,"value":2,"note":"fine"}}',
        ]
        blob = b"".join(write_frame(b) for b in bodies)
        out = _ckernels.scan_frames(blob)
        assert out.count == 3 and not out.slow
        assert_scans_match(blob)

    def test_malformed_bodies_defer_identically(self):
        bodies = [
            "{",
            "[]",
            "true",
            '{"type":"d","parameter":{"id":1,"time":0,"value":1}}',  # time 0 invalid
            '{"type":"d","parameter":{"id":1,"time":-5,"value":1}}',
            '{"type":"d","parameter":{"id":1,"time":5,"value":01}}',  # leading zero
            '{"type":"d","parameter":{"id":1,"time":5,"value":+1}}',
            '{"type":"d","parameter":{"id":1,"time":5,"value":NaN}}',
            '{"type":"d","parameter":{"id":1,"time":5,"value":1.}}',
            '{"type":"d","parameter":{"id":1,"time":5,"value":1e}}',
            '{"type":"d","parameter":{"id":1,"time":5}}',  # missing value
            '{"type":"d","parameter":{"id":1,"id":2,"time":5,"value":1}}',  # dup key
            '{"type":"D","parameter":{"id":1,"tag":"Z::a","type":"F"}}',
            '{"type":"d","parameter":{"id":1,"time":5,"value":1},"type":"d"}',
            '{"type":"d","parameter":{"id":1,"time":5,"value":1}}garbage',
            '{"type":"d","parameter":{"id":1,"time":5,"value":1,"s":"a\\"b"}}',  # escape
            '{"type":"d","parameter":{"id":1,"time":5,"value":1,"deep":{"x":1}}}',
        ]
        blob = b"".join(write_frame(b) for b in bodies)
        assert_scans_match(blob)

    def test_truncation_at_every_cut(self):
        reqs = [DataRecord(i, 100 + i, 0.5 * i, 0) for i in range(1, 6)]
        blob = frames_blob(reqs)
        for cut in range(len(blob) + 1):
            assert_scans_match(blob[:cut])

    def test_bad_flag_and_oversize_stop_scan(self):
        good = write_frame(encode_request(DataRecord(1, 2, 3.0, 0)))
        bad_flag = good + b"\x05AAAA" + good
        a = _ckernels.scan_frames(bad_flag)
        assert a.error == 1 and a.count == 1 and a.consumed == len(good)
        assert_scans_match(bad_flag)
        oversize = good + b"\x00" + (wire.MAX_PAYLOAD_BYTES + 1).to_bytes(4, "big")
        b = _ckernels.scan_frames(oversize)
        assert b.error == 2 and b.consumed == len(good)
        assert_scans_match(oversize)

    def test_max_payload_parameter(self):
        body = encode_request(DataRecord(1, 2, 3.0, 0))
        blob = write_frame(body)
        small = len(body) - 1
        a = _ckernels.scan_frames(blob, 0, small)
        b = kernels.pure_scan_frames(blob, 0, small)
        assert a.error == b.error == kernels.FATAL_TOO_LARGE

    def test_float_values_bit_equal(self):
        rng = random.Random(22)
        reqs = [DataRecord(1, 10 + i, rng.uniform(-1e306, 1e306), 0) for i in range(500)]
        blob = frames_blob(reqs)
        a = _ckernels.scan_frames(blob)
        b = kernels.pure_scan_frames(blob)
        assert a.count == b.count == 500
        np.testing.assert_array_equal(a.values, b.values)

    def test_parse_record_body_parity(self):
        bodies = [
            encode_request(DataRecord(5, 9, 4.25, 17)),
            encode_request(DataRecord(5, 9, 42, 17)),
            encode_request(StreamDefinition(5, "Z::a/b", "F")),
            '{"type":"d","parameter":{"id":5,"time":9,"value":"s"}}',
        ]
        for body in bodies:
            raw = body.encode() if isinstance(body, str) else body
            assert _ckernels.parse_record_body(raw) == kernels.pure_parse_record_body(raw)


class TestFoldKernels:
    def _random_case(self, seed, n, ngroups):
        rng = np.random.default_rng(seed)
        group_idx = np.sort(rng.integers(0, ngroups, size=n)).astype(np.int64)
        times = rng.integers(1, 10_000, size=n).astype(np.uint64)
        values = rng.standard_normal(n)
        actual_groups = int(group_idx[-1]) + 1 if n else 0
        return group_idx, times, values, actual_groups

    def test_lane_parity(self):
        for seed in range(5):
            g, t, v, ng = self._random_case(seed, 4000, 37)
            a = _ckernels.fold_groups(g, t, v, ng)
            b = kernels.pure_fold_groups(g, t, v, ng)
            for x, y in zip(a, b):
                np.testing.assert_array_equal(x, y)

    def test_against_brute_force_oracle(self):
        g, t, v, ng = self._random_case(99, 3000, 50)
        vmin, vmax, close, close_ts, count = kernels.fold_groups(g, t, v, ng)
        records = [(int(g[i]), int(t[i]), float(v[i])) for i in range(len(g))]
        oracle = {}
        for tag, ts, val in records:
            cell = oracle.get(tag)
            if cell is None:
                oracle[tag] = [val, val, val, ts, 1]
            else:
                cell[0] = min(cell[0], val)
                cell[1] = max(cell[1], val)
                if ts >= cell[3]:
                    cell[2] = val
                    cell[3] = ts
                cell[4] += 1
        for gi, cell in oracle.items():
            assert vmin[gi] == cell[0]
            assert vmax[gi] == cell[1]
            assert close[gi] == cell[2]
            assert close_ts[gi] == cell[3]
            assert count[gi] == cell[4]

    def test_close_tie_latest_arrival_wins(self):
        g = np.zeros(3, dtype=np.int64)
        t = np.array([5, 5, 5], dtype=np.uint64)
        v = np.array([1.0, 2.0, 3.0])
        for fold in (kernels.pure_fold_groups, _ckernels.fold_groups):
            _, _, close, close_ts, count = fold(g, t, v, 1)
            assert close[0] == 3.0 and close_ts[0] == 5 and count[0] == 3

    def test_fold_one_parity(self):
        t = np.array([3, 1, 2, 3], dtype=np.uint64)
        v = np.array([5.0, -1.0, 9.0, 2.0])
        assert kernels.pure_fold_one(t, v) == _ckernels.fold_one(t, v)
        assert _ckernels.fold_one(t, v) == (-1.0, 9.0, 2.0, 3, 4)

    def test_empty_fold_raises(self):
        t = np.zeros(0, dtype=np.uint64)
        v = np.zeros(0)
        with pytest.raises(ValueError):
            kernels.pure_fold_one(t, v)
        with pytest.raises(ValueError):
            _ckernels.fold_one(t, v)
