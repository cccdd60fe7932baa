import json

from rtdap import kernels
from rtdap.bench import (
    bench_aggregation,
    bench_kernels,
    bench_scan_window,
    bench_write_batch,
    best_rate,
    environment_fingerprint,
    write_report,
)


class TestReports:
    def test_environment_fingerprint_fields(self):
        env = environment_fingerprint()
        assert {"python", "platform", "cpu_count", "kernel_lane", "commit"} <= env.keys()

    def test_write_report_embeds_config(self, tmp_path):
        out = str(tmp_path / "r.csv")
        rows = [{"scenario": "x", "v": 1}, {"scenario": "x", "v": 2, "extra": "y"}]
        write_report(rows, out, {"seed": 7})
        lines = open(out, encoding="utf-8").read().splitlines()
        meta = json.loads(lines[0][2:])
        assert meta["config"] == {"seed": 7}
        assert lines[1] == "scenario,v,extra"
        assert lines[2] == "x,1,"
        assert len(lines) == 4

    def test_best_rate_filters(self):
        rows = [
            {"workers": 1, "records_per_s": 5.0},
            {"workers": 1, "records_per_s": 9.0},
            {"workers": 2, "records_per_s": 7.0},
        ]
        assert best_rate(rows, workers=1) == 9.0


class TestScenarios:
    def test_write_batch_rows(self):
        rows = bench_write_batch(batches=(1, 100), n_records=3000, reps=1)
        assert {r["batch"] for r in rows} == {1, 100}
        assert all(r["records_per_s"] > 0 for r in rows)

    def test_scan_window_reports_rows_probed(self):
        rows = bench_scan_window(minutes=(1, 60, 120), cache=(False,), n_scans=5, records_per_min=2)
        by_window = {r["window_min"]: r for r in rows}
        assert by_window[1]["rows_probed_per_scan"] == 1.0
        assert by_window[60]["rows_probed_per_scan"] in (1.0, 2.0)  # random offsets may straddle
        assert by_window[120]["rows_probed_per_scan"] >= 2.0

    def test_aggregation_point_drains_when_sustainable(self):
        rows = bench_aggregation(rates=(200,), max_queues=(), fixed_rate=200, secs=0.5, n_tags=10)
        assert rows[0]["drained"] is True
        assert rows[0]["final_lag"] == 0
        assert rows[0]["avg_queue_size"] <= rows[0]["max_queue"]

    def test_kernels_comparison_has_both_lanes(self):
        rows = bench_kernels(n_frames=2000, n_fold=20_000, reps=1)
        lanes = {r["lane"] for r in rows}
        assert "pure" in lanes
        if kernels.HAVE_NATIVE:
            assert "compiled" in lanes
            fold_pure = best_rate_for(rows, "fold_groups", "pure")
            fold_native = best_rate_for(rows, "fold_groups", "compiled")
            scan_pure = best_rate_for(rows, "scan_frames", "pure")
            scan_native = best_rate_for(rows, "scan_frames", "compiled")
            assert scan_native > scan_pure  # the whole point of the extension
            assert fold_native > 0 and fold_pure > 0


def best_rate_for(rows, kernel, lane):
    return max(r["ops_per_s"] for r in rows if r["kernel"] == kernel and r["lane"] == lane)
