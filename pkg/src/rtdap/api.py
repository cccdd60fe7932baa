"""HTTP query service over the store: tag listing, raw/aggregated series,
CSV upload/download, and a stats snapshot. A thin adapter — results equal
direct store calls; the dashboard is its only intended consumer, so CORS
is open.

CSV dialect (frozen): header ``tag,utcMillis,value,status``, RFC-4180
quoting, UTC millisecond integers, float values in shortest round-trip
form. Upload line numbers count data rows from 1 (header excluded).
"""

from __future__ import annotations

import csv
import io
import json
import os
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from .model import MalformedTag, Resolution, parse_tag
from .store import BadRange, TsdbStore, UnknownTag

MAX_UPLOAD_BYTES = 64 * 1024 * 1024

_RES_PARAM = {"min": Resolution.MINUTE, "hour": Resolution.HOUR, "day": Resolution.DAY}


class QueryApi:
    def __init__(
        self,
        store: TsdbStore,
        bind: tuple[str, int] = ("127.0.0.1", 0),
        ingest_stats=None,
        topology=None,
        log=None,
        ui_dir: str | None = None,
    ):
        self.store = store
        self.ingest_stats = ingest_stats
        self.topology = topology
        self.log = log
        self.ui_dir = ui_dir
        api = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, fmt, *args):
                pass

            def _send(self, code: int, payload: bytes, content_type: str = "application/json") -> None:
                self.send_response(code)
                self.send_header("Content-Type", content_type)
                self.send_header("Content-Length", str(len(payload)))
                self.send_header("Access-Control-Allow-Origin", "*")
                self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
                self.send_header("Access-Control-Allow-Headers", "Content-Type")
                self.end_headers()
                self.wfile.write(payload)

            def _json(self, code: int, obj) -> None:
                self._send(code, json.dumps(obj).encode("utf-8"))

            def do_OPTIONS(self):  # noqa: N802 (stdlib naming)
                self._send(204, b"")

            def do_GET(self):  # noqa: N802
                url = urlparse(self.path)
                qs = parse_qs(url.query)
                try:
                    if url.path == "/tags":
                        self._json(200, api.handle_tags(qs))
                    elif url.path == "/series":
                        self._json(200, api.handle_series(qs))
                    elif url.path == "/download":
                        self._send(200, api.handle_download(qs), content_type="text/csv")
                    elif url.path == "/stats":
                        self._json(200, api.handle_stats())
                    elif url.path == "/" or url.path.startswith("/ui"):
                        self._static(url.path)
                    else:
                        self._json(404, {"error": f"no such endpoint {url.path}"})
                except UnknownTag as exc:
                    self._json(404, {"error": f"unknown tag {exc.args[0]!r}"})
                except (BadRange, MalformedTag, ValueError) as exc:
                    self._json(400, {"error": str(exc)})

            def do_POST(self):  # noqa: N802
                url = urlparse(self.path)
                if url.path != "/upload":
                    self._json(404, {"error": f"no such endpoint {url.path}"})
                    return
                length = int(self.headers.get("Content-Length", "0"))
                if length > MAX_UPLOAD_BYTES:
                    self._json(400, {"error": "upload too large"})
                    return
                body = self.rfile.read(length)
                code, obj = api.handle_upload(body)
                self._json(code, obj)

            def _static(self, path: str) -> None:
                if api.ui_dir is None:
                    self._json(404, {"error": "no UI bundle configured"})
                    return
                rel = path[3:] if path.startswith("/ui") else path
                rel = rel.lstrip("/") or "index.html"
                full = os.path.realpath(os.path.join(api.ui_dir, rel))
                if not full.startswith(os.path.realpath(api.ui_dir)) or not os.path.isfile(full):
                    self._json(404, {"error": "not found"})
                    return
                ctype = {
                    ".html": "text/html",
                    ".js": "text/javascript",
                    ".css": "text/css",
                    ".map": "application/json",
                }.get(os.path.splitext(full)[1], "application/octet-stream")
                with open(full, "rb") as fh:
                    self._send(200, fh.read(), content_type=ctype)

        self._httpd = ThreadingHTTPServer(bind, Handler)
        self._thread: threading.Thread | None = None

    # -- lifecycle ------------------------------------------------------------

    def start(self) -> "QueryApi":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True, name="query-api")
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=2.0)

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    # -- endpoint logic ---------------------------------------------------------

    def handle_tags(self, qs: dict) -> dict:
        prefix = qs.get("prefix", [""])[0]
        limit = min(int(qs.get("limit", ["1000"])[0]), 10_000)
        cursor = qs.get("cursor", [""])[0]
        names = self.store.dictionary.names(prefix)
        if cursor:
            names = [item for item in names if item[0] > cursor]
        page = names[:limit]
        out = {"tags": [{"name": n, "id": i} for n, i in page]}
        if len(names) > limit:
            out["next"] = page[-1][0]
        return out

    def handle_series(self, qs: dict) -> dict:
        tag_text = qs.get("tag", [""])[0]
        res = qs.get("res", ["raw"])[0]
        from_ms = int(qs.get("from", ["0"])[0])
        to_ms = int(qs.get("to", ["0"])[0])
        tag_id = self.store.dictionary.id_of(tag_text)
        if res == "raw":
            records = self.store.scan_raw(tag_id, from_ms, to_ms)
            points = [{"t": t, "v": v, "status": s} for t, _k, v, s in records]
        elif res in _RES_PARAM:
            cells = self.store.read_agg(tag_id, _RES_PARAM[res], from_ms, to_ms)
            points = [
                {"t": c.bucket_start, "min": c.vmin, "max": c.vmax, "close": c.close, "count": c.count}
                for c in cells
            ]
        else:
            raise ValueError(f"bad resolution {res!r}")
        return {"tag": tag_text, "resolution": res, "points": points}

    def handle_download(self, qs: dict) -> bytes:
        tag_text = qs.get("tag", [""])[0]
        from_ms = int(qs.get("from", ["0"])[0])
        to_ms = int(qs.get("to", ["0"])[0])
        tag_id = self.store.dictionary.id_of(tag_text)
        records = self.store.scan_raw(tag_id, from_ms, to_ms)
        out = io.StringIO()
        writer = csv.writer(out)
        writer.writerow(["tag", "utcMillis", "value", "status"])
        for t, kind, value, status in records:
            if kind == "F":
                text = repr(value)
            elif kind == "B":
                text = "true" if value else "false"
            else:
                text = str(value)
            writer.writerow([tag_text, t, text, status])
        return out.getvalue().encode("utf-8")

    def handle_upload(self, body: bytes) -> tuple[int, dict]:
        """Import CSV rows until the first malformed one; rows before it are
        committed and counted."""
        try:
            text = body.decode("utf-8")
        except UnicodeDecodeError:
            return 400, {"error": "body is not UTF-8", "line": 0, "imported": 0}
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None:
            return 200, {"imported": 0}
        if [h.strip() for h in header] != ["tag", "utcMillis", "value", "status"]:
            return 400, {"error": "bad header; expected tag,utcMillis,value,status", "line": 0, "imported": 0}
        rows: list[tuple] = []
        touched: dict[int, list[int]] = {}
        error = None
        line = 0
        for line, row in enumerate(reader, start=1):
            if not row:
                continue
            try:
                if len(row) != 4:
                    raise ValueError(f"expected 4 columns, got {len(row)}")
                tag = parse_tag(row[0])
                t_ms = int(row[1])
                if t_ms <= 0:
                    raise ValueError("utcMillis must be positive")
                value = float(row[2])
                status = int(row[3]) if row[3].strip() else 0
                if not 0 <= status <= 255:
                    raise ValueError("status out of range")
            except (ValueError, MalformedTag) as exc:
                error = str(exc)
                break
            tag_id = self.store.register_tag(tag)
            rows.append((tag_id, t_ms, "F", value, status))
            touched.setdefault(tag_id, [t_ms, t_ms])
            span = touched[tag_id]
            span[0] = min(span[0], t_ms)
            span[1] = max(span[1], t_ms)
        imported = len(rows)
        if rows:
            self.store.put_batch(rows)
            for tag_id, (lo, hi) in touched.items():
                self.store.rebuild_aggregates(lo, hi + 1, tag_ids=[tag_id])
        if error is not None:
            return 400, {"error": error, "line": line, "imported": imported}
        return 200, {"imported": imported}

    def handle_stats(self) -> dict:
        out: dict = {"store": self.store.stats()}
        out["ingest"] = vars(self.ingest_stats()) if callable(self.ingest_stats) else {}
        if self.topology is not None:
            out["topology"] = self.topology.metrics().as_dict()
            out["topology"]["lag"] = self.topology.total_lag()
        else:
            out["topology"] = {}
        if self.log is not None:
            out["log"] = {
                "partitions": self.log.partition_count,
                "total_records": self.log.total_records(),
            }
        else:
            out["log"] = {}
        return out
