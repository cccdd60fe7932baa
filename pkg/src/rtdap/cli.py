"""Command-line entry points: full-stack server, simulator, flood
generator, benchmark scenarios, analytics jobs and the offline
aggregation rebuild."""

from __future__ import annotations

import argparse
import json
import signal
import sys
import threading
import time

from . import bench as bench_mod
from . import pls as pls_mod
from .api import QueryApi
from .msglog import MessageLog
from .server import IngestServer
from .sim import FloodConfig, IngestClient, SourceConfig, TagSpec, run_flood, run_source
from .store import TsdbStore
from .topology import Topology


def _addr(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return host or "127.0.0.1", int(port)


def cmd_serve(args) -> int:
    if args.log_dir:
        log = MessageLog(args.partitions, durability="file", path=args.log_dir)
    else:
        log = MessageLog(args.partitions)
    store = TsdbStore(
        path=args.store_dir,
        shards=args.shards,
        cache_rows=args.cache_rows,
    )
    server = IngestServer(
        log,
        store.dictionary,
        bind=_addr(args.bind),
        workers=args.workers,
        max_frame=args.max_frame,
    ).start()
    topo = Topology(log, store, group=args.group, max_queue=args.max_queue).start()
    api = QueryApi(
        store,
        bind=_addr(args.http_bind),
        ingest_stats=server.stats,
        topology=topo,
        log=log,
        ui_dir=args.ui_dir,
    ).start()
    print(f"ingest on {server.address[0]}:{server.port}  http on :{api.port}")

    sim_thread = None
    if args.demo_sim:
        cfg = SourceConfig(
            tags=[
                TagSpec(f"DEMO::unit1/dev{i}/OUT.PV", waveform=w, amplitude=5.0, period_s=60.0, baseline=20.0 + i)
                for i, w in enumerate(["sine", "ramp", "randomWalk", "constant"])
            ],
            rate_per_tag=2.0,
            duration_s=86_400.0,
            logical_clock=False,
            start_ms=int(time.time() * 1000),
        )
        sim_thread = threading.Thread(
            target=run_source, args=(cfg, ("127.0.0.1", server.port)), daemon=True
        )
        sim_thread.start()
        print("demo simulator running (4 tags @ 2 Hz)")

    stop = threading.Event()
    signal.signal(signal.SIGINT, lambda *_: stop.set())
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    try:
        while not stop.is_set():
            time.sleep(0.2)
    finally:
        api.stop()
        server.stop()
        topo.stop()
        store.close()
        log.close()
    return 0


def cmd_sim(args) -> int:
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg = SourceConfig.from_json(fh.read())
    else:
        cfg = SourceConfig(
            tags=[
                TagSpec(f"SIM::unit1/dev{i}/OUT.PV", waveform="sine", amplitude=1.0, period_s=60.0)
                for i in range(args.tags)
            ],
            rate_per_tag=args.rate,
            duration_s=args.secs,
            seed=args.seed,
            logical_clock=not args.wall_clock,
        )
    report = run_source(cfg, _addr(args.target))
    print(json.dumps({"sent": report.sent, "connection_lost": report.connection_lost}))
    return 1 if report.connection_lost else 0


def cmd_flood(args) -> int:
    cfg = FloodConfig(
        connections=args.conns,
        payload_bytes=args.payload,
        encoding=args.enc,
        duration_s=args.secs,
        seed=args.seed,
        bandwidth_cap_bps=args.cap_mbps * 1_000_000 if args.cap_mbps else 0.0,
    )
    report = run_flood(cfg, _addr(args.target))
    print(
        json.dumps(
            {
                "sent": report.sent,
                "steady_records_per_s": round(report.steady_records_per_s, 1),
                "steady_bytes_per_s": round(report.steady_bytes_per_s, 1),
                "connection_lost": report.connection_lost,
            }
        )
    )
    return 0


def cmd_bench(args) -> int:
    ints = lambda text: [int(x) for x in text.split(",")]  # noqa: E731
    if args.scenario == "ingest-scaling":
        config = {"workers": ints(args.workers), "secs": args.secs, "reps": args.reps}
        rows = bench_mod.bench_ingest_scaling(
            workers=config["workers"], secs=args.secs, reps=args.reps
        )
    elif args.scenario == "compression":
        config = {"payloads": ints(args.payloads), "cap_mbps": args.cap_mbps, "secs": args.secs}
        rows = bench_mod.bench_compression(
            payloads=config["payloads"], cap_mbps=args.cap_mbps, secs=args.secs, reps=args.reps
        )
    elif args.scenario == "write-batch":
        config = {"batches": ints(args.batch), "n_records": args.n_records}
        rows = bench_mod.bench_write_batch(batches=config["batches"], n_records=args.n_records, reps=args.reps)
    elif args.scenario == "scan-window":
        config = {"minutes": ints(args.mins), "cache": args.cache}
        caches = {"on": (True,), "off": (False,), "both": (False, True)}[args.cache]
        rows = bench_mod.bench_scan_window(minutes=config["minutes"], cache=caches)
    elif args.scenario == "aggregation":
        config = {"rates": ints(args.rates), "max_queues": ints(args.max_queues), "secs": args.secs}
        rows = bench_mod.bench_aggregation(
            rates=config["rates"], max_queues=config["max_queues"], secs=args.secs
        )
    elif args.scenario == "kernels":
        config = {"reps": args.reps}
        rows = bench_mod.bench_kernels(reps=args.reps)
    else:
        raise SystemExit(f"unknown scenario {args.scenario}")
    bench_mod.write_report(rows, args.out, config)
    for row in rows:
        print(json.dumps(row))
    return 0


def _load_job(path: str) -> pls_mod.WindowJobSpec:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return pls_mod.WindowJobSpec(
        input_tags=raw["inputTags"],
        output_tag=raw["outputTag"],
        window_ms=int(raw.get("windowMillis", 600_000)),
        period_ms=int(raw.get("periodMillis", 60_000)),
        k=int(raw.get("k", 2)),
    )


def cmd_analytics(args) -> int:
    spec = _load_job(args.config)
    store = TsdbStore(path=args.store_dir)
    if args.action == "fit":
        tags = spec.input_tags + [args.target_tag or spec.output_tag]
        matrix, _ts = pls_mod.extract_training_set(store, tags, args.from_ms, args.to_ms)
        if matrix.shape[0] < 2:
            raise SystemExit("not enough joined history to fit")
        model = pls_mod.pls_fit(matrix[:, :-1], matrix[:, -1], spec.k)
        pls_mod.save_model(args.model, model)
        r2 = pls_mod.fitted_r2(model, matrix[:, :-1], matrix[:, -1])
        print(json.dumps({"rows": matrix.shape[0], "k": model.k, "r2": round(r2, 6)}))
        return 0
    model = pls_mod.load_model(args.model)
    client = IngestClient(_addr(args.target))
    runner = pls_mod.WindowJobRunner(
        model,
        spec,
        store,
        emit=lambda tag, t, v: client.send_tag(tag, t, v),
    )
    try:
        if args.ticks:
            for _ in range(args.ticks):
                runner.tick(int(time.time() * 1000))
                time.sleep(spec.period_ms / 1000.0)
        else:
            runner.run_wall_clock(args.secs)
    finally:
        client.close()
    print(json.dumps({"ticks": runner.ticks, "emitted": runner.emitted, "skipped": runner.skipped}))
    return 0


def cmd_rebuild_agg(args) -> int:
    store = TsdbStore(path=args.store_dir)
    tag_ids = None
    if args.tags:
        lo, _, hi = args.tags.partition(":")
        tag_ids = range(int(lo), int(hi) + 1)
    written = store.rebuild_aggregates(args.from_ms, args.to_ms, tag_ids=tag_ids)
    store.close()
    print(json.dumps({"cells_written": written}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rtdap", description="Desk-scale real-time process analytics platform")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the full stack: ingest + topology + query API")
    p.add_argument("--bind", default="127.0.0.1:9400")
    p.add_argument("--workers", type=int, default=2)
    p.add_argument("--partitions", type=int, default=4)
    p.add_argument("--max-frame", type=int, default=1_048_576 + 4_096)
    p.add_argument("--max-queue", type=int, default=1000)
    p.add_argument("--group", default="agg")
    p.add_argument("--shards", type=int, default=1)
    p.add_argument("--cache-rows", type=int, default=1024)
    p.add_argument("--store-dir", default=None)
    p.add_argument("--log-dir", default=None)
    p.add_argument("--http-bind", default="127.0.0.1:9480")
    p.add_argument("--ui-dir", default=None)
    p.add_argument("--demo-sim", action="store_true")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("sim", help="stream simulated process measurements")
    p.add_argument("--config", default=None, help="JSON SourceConfig")
    p.add_argument("--target", default="127.0.0.1:9400")
    p.add_argument("--tags", type=int, default=4)
    p.add_argument("--rate", type=float, default=10.0)
    p.add_argument("--secs", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--wall-clock", action="store_true")
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("flood", help="saturate the ingest server")
    p.add_argument("--target", default="127.0.0.1:9400")
    p.add_argument("--payload", type=int, default=70)
    p.add_argument("--enc", choices=["none", "deflate"], default="none")
    p.add_argument("--conns", type=int, default=7)
    p.add_argument("--secs", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cap-mbps", type=float, default=0.0)
    p.set_defaults(func=cmd_flood)

    p = sub.add_parser("bench", help="run a benchmark scenario")
    p.add_argument("scenario", choices=["ingest-scaling", "compression", "write-batch", "scan-window", "aggregation", "kernels"])
    p.add_argument("--out", default=None, help="CSV report path")
    p.add_argument("--workers", default="1,2,4")
    p.add_argument("--payloads", default="64,1024,8192,65536")
    p.add_argument("--cap-mbps", type=float, default=100.0)
    p.add_argument("--batch", default="1,100,2000")
    p.add_argument("--n-records", type=int, default=60_000)
    p.add_argument("--mins", default="1,10,60,960,2400")
    p.add_argument("--cache", choices=["on", "off", "both"], default="both")
    p.add_argument("--rates", default="200,400,800,1600")
    p.add_argument("--max-queues", default="20,50,100,200")
    p.add_argument("--secs", type=float, default=2.0)
    p.add_argument("--reps", type=int, default=3)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("analytics", help="fit or run a windowed inference job")
    p.add_argument("action", choices=["fit", "run"])
    p.add_argument("--config", required=True, help="job spec JSON")
    p.add_argument("--store-dir", required=True)
    p.add_argument("--model", required=True, help="model file (.npz)")
    p.add_argument("--from-ms", type=int, default=0)
    p.add_argument("--to-ms", type=int, default=2**62)
    p.add_argument("--target-tag", default=None, help="training response tag (fit)")
    p.add_argument("--target", default="127.0.0.1:9400", help="ingest address (run)")
    p.add_argument("--ticks", type=int, default=0)
    p.add_argument("--secs", type=float, default=60.0)
    p.set_defaults(func=cmd_analytics)

    p = sub.add_parser("rebuild-agg", help="offline aggregation rebuild over stored raw data")
    p.add_argument("--store-dir", required=True)
    p.add_argument("--from-ms", type=int, required=True)
    p.add_argument("--to-ms", type=int, required=True)
    p.add_argument("--tags", default=None, help="tag id range LO:HI")
    p.set_defaults(func=cmd_rebuild_agg)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
