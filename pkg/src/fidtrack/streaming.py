"""Pose-record delivery over local sockets plus the HTTP control API.

The wire format is newline-delimited canonical JSON: exactly one line per
processed frame (empty frames included), byte-deterministic, so consumers can
compute detection rates from the stream alone and golden-file tests can
compare bytes.
"""

from __future__ import annotations

import base64
import io
import json
import math
import queue
import socket
import socketserver
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .engine import (
    ConfigError,
    TrackerRuntime,
    config_from_dict,
    dump_config,
)
from .geometry import matrix_to_quaternion

WIRE_VERSION = 1
CONSUMER_BACKLOG_LIMIT = 1024
STREAM_MAX_RATE_HZ = 10.0


# ---------------------------------------------------------------------------
# wire encoding


def _canonical_quaternion(R: np.ndarray) -> np.ndarray:
    """Unit quaternion [w, x, y, z] with a deterministic sign: the first
    component whose magnitude exceeds 1e-9 is positive."""
    q = matrix_to_quaternion(R)
    q = q / np.linalg.norm(q)
    for c in q:
        if abs(c) > 1e-9:
            if c < 0:
                q = -q
            break
    return q


def _format_line(frame_index: int, timestamp_us: int, objects) -> bytes:
    """objects: iterables of (id, kind, t, q, err_px, ambiguous)."""
    parts = [
        '{"v":%d,"ts_us":%d,"frame":%d,"objects":['
        % (WIRE_VERSION, timestamp_us, frame_index)
    ]
    objs = []
    for oid, kind, t, q, err, ambiguous in objects:
        objs.append(
            '{"id":%s,"kind":%s,"t":[%.6f,%.6f,%.6f],'
            '"q":[%.6f,%.6f,%.6f,%.6f],"err_px":%.3f,"ambiguous":%s}'
            % (
                json.dumps(oid),
                json.dumps(kind),
                t[0],
                t[1],
                t[2],
                q[0],
                q[1],
                q[2],
                q[3],
                err,
                "true" if ambiguous else "false",
            )
        )
    parts.append(",".join(objs))
    parts.append("]}\n")
    return "".join(parts).encode("utf-8")


def encode_record(frame_index: int, timestamp_us: int, records) -> bytes:
    """One canonical wire line for one frame. Keys in schema order, t and q
    fixed to 6 decimals, err_px to 3, single trailing newline."""
    return _format_line(
        frame_index,
        timestamp_us,
        (
            (
                r.object_id,
                r.kind,
                r.pose.translation,
                _canonical_quaternion(r.pose.rotation),
                r.rms_error,
                r.ambiguous,
            )
            for r in records
        ),
    )


def parse_record(line: bytes) -> dict:
    """Parse and validate one wire line."""
    doc = json.loads(line.decode("utf-8"))
    if doc.get("v") != WIRE_VERSION:
        raise ValueError(f"unsupported wire version {doc.get('v')!r}")
    for key in ("ts_us", "frame", "objects"):
        if key not in doc:
            raise ValueError(f"missing key {key!r}")
    for obj in doc["objects"]:
        q = obj.get("q", ())
        if len(q) != 4 or abs(math.sqrt(sum(c * c for c in q)) - 1.0) > 1e-6:
            raise ValueError(f"object {obj.get('id')!r}: q is not unit-norm")
        if len(obj.get("t", ())) != 3:
            raise ValueError(f"object {obj.get('id')!r}: t must have 3 components")
    return doc


def reencode_record(doc: dict) -> bytes:
    """Re-serialize a parsed wire document canonically (round-trip oracle)."""
    return _format_line(
        doc["frame"],
        doc["ts_us"],
        (
            (o["id"], o["kind"], o["t"], o["q"], o["err_px"], o["ambiguous"])
            for o in doc["objects"]
        ),
    )


# ---------------------------------------------------------------------------
# pose stream server


class PoseStreamServer:
    """Broadcasts wire lines to every connected consumer.

    Each consumer gets its own bounded queue and writer thread; a consumer
    whose backlog exceeds CONSUMER_BACKLOG_LIMIT records is disconnected so
    the pipeline never blocks.
    """

    def __init__(self, kind: str, path: str = "", port: int = 0, host: str = "127.0.0.1"):
        if kind == "unix":
            self._sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
            self._sock.bind(path)
            self.address = path
        elif kind == "tcp":
            self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            self._sock.bind((host, port))
            self.address = self._sock.getsockname()
        else:
            raise ValueError("kind must be 'unix' or 'tcp'")
        self._sock.listen(16)
        self._consumers = []  # (queue, conn)
        self._lock = threading.Lock()
        self._closed = False
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()

    @property
    def port(self) -> int:
        return self.address[1]

    def _accept_loop(self):
        while not self._closed:
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            q = queue.Queue(maxsize=CONSUMER_BACKLOG_LIMIT)
            with self._lock:
                self._consumers.append((q, conn))
            threading.Thread(
                target=self._writer_loop, args=(q, conn), daemon=True
            ).start()

    def _writer_loop(self, q: queue.Queue, conn: socket.socket):
        try:
            while True:
                line = q.get()
                if line is None:
                    return
                conn.sendall(line)
        except OSError:
            pass
        finally:
            self._drop(q, conn)

    def _drop(self, q: queue.Queue, conn: socket.socket):
        with self._lock:
            self._consumers = [(cq, cc) for cq, cc in self._consumers if cq is not q]
        try:
            conn.close()
        except OSError:
            pass

    def publish(self, line: bytes):
        """Fan a line out to every consumer; drops overflowing consumers."""
        with self._lock:
            consumers = list(self._consumers)
        for q, conn in consumers:
            try:
                q.put_nowait(line)
            except queue.Full:
                self._drop(q, conn)
                try:
                    q.put_nowait(None)  # wake the writer so its thread exits
                except queue.Full:
                    pass

    @property
    def consumer_count(self) -> int:
        with self._lock:
            return len(self._consumers)

    def close(self):
        self._closed = True
        try:
            self._sock.close()
        except OSError:
            pass
        with self._lock:
            consumers = list(self._consumers)
        for q, conn in consumers:
            self._drop(q, conn)


# ---------------------------------------------------------------------------
# control API


class ControlApiServer:
    """Loopback HTTP API the configuration UI drives the engine through."""

    def __init__(
        self,
        runtime: TrackerRuntime,
        port: int = 0,
        ui_dir: str | None = None,
        host: str = "127.0.0.1",
    ):
        self.runtime = runtime
        self.ui_dir = ui_dir
        self._closed = False
        self._config_lock = threading.Lock()
        self._latest_config = runtime.config
        outer = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, *args):
                pass

            def _send(self, status, body: bytes, content_type="application/json"):
                self.send_response(status)
                self.send_header("Content-Type", content_type)
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def _json(self, status, doc):
                self._send(status, (json.dumps(doc) + "\n").encode("utf-8"))

            def do_GET(self):
                if self.path == "/api/v1/config":
                    with outer._config_lock:
                        text = dump_config(outer._latest_config)
                    self._send(200, text.encode("utf-8"), "application/yaml")
                elif self.path == "/api/v1/state":
                    self._json(200, outer.runtime.state_snapshot())
                elif self.path == "/api/v1/stream":
                    outer._stream(self)
                elif self.path == "/ui" or self.path.startswith("/ui/"):
                    outer._serve_static(self)
                else:
                    self._json(404, {"error": "not found"})

            def do_PUT(self):
                if self.path != "/api/v1/config":
                    self._json(404, {"error": "not found"})
                    return
                length = int(self.headers.get("Content-Length", 0))
                body = self.rfile.read(length)
                try:
                    import yaml

                    doc = yaml.safe_load(body.decode("utf-8"))
                    cfg = config_from_dict(doc)
                except ConfigError as e:
                    self._json(400, {"errors": e.problems})
                    return
                except Exception as e:
                    self._json(400, {"errors": [str(e)]})
                    return
                outer.runtime.submit_config(cfg)
                with outer._config_lock:
                    outer._latest_config = cfg
                self._send(200, dump_config(cfg).encode("utf-8"), "application/yaml")

            def do_POST(self):
                if self.path != "/api/v1/background/capture":
                    self._json(404, {"error": "not found"})
                    return
                length = int(self.headers.get("Content-Length", 0))
                body = self.rfile.read(length) or b"{}"
                try:
                    frames = json.loads(body.decode("utf-8") or "{}").get("frames")
                except json.JSONDecodeError:
                    self._json(400, {"errors": ["body must be JSON"]})
                    return
                try:
                    outer.runtime.request_background_capture(frames)
                except ConfigError as e:
                    status = 409 if "disabled" in str(e) else 400
                    self._json(status, {"errors": e.problems})
                    return
                self._json(200, {"capturing": True})

        self._server = ThreadingHTTPServer((host, port), Handler)
        self._server.daemon_threads = True
        # long-lived /stream handlers must not block server_close()
        self._server.block_on_close = False
        self.port = self._server.server_address[1]
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    def _stream(self, handler):
        """Server-push preview channel: NDJSON, throttled to 10 messages/s,
        latest state wins (intermediate frames are skipped, never queued)."""
        handler.send_response(200)
        handler.send_header("Content-Type", "application/x-ndjson")
        handler.send_header("Cache-Control", "no-store")
        handler.end_headers()
        last_frame = -1
        interval = 1.0 / STREAM_MAX_RATE_HZ
        try:
            while not self._closed:
                msg = self._stream_message(last_frame)
                if msg is not None:
                    last_frame = msg["frame_index"]
                    handler.wfile.write((json.dumps(msg) + "\n").encode("utf-8"))
                    handler.wfile.flush()
                time.sleep(interval)
        except OSError:
            return

    def _stream_message(self, last_frame: int) -> dict | None:
        rt = self.runtime
        with rt.lock:
            frames = rt.frames_processed
            if frames - 1 <= last_frame:
                return None
            records = list(rt.last_records)
            masses = list(rt.last_masses)
            markers = list(rt.last_markers)
            rates = {oid: t.rate for oid, t in sorted(rt.rates.items())}
        msg = {
            "frame_index": frames - 1,
            "masses": [
                {
                    "class_id": m.class_id,
                    "bbox": [m.x_min, m.y_min, m.x_max, m.y_max],
                    "centroid": [float(m.smoothed_centroid[0]), float(m.smoothed_centroid[1])],
                    "pixel_count": m.pixel_count,
                }
                for m in masses
            ],
            "markers": [
                {"id": d.id, "corners": np.asarray(d.corners).tolist()}
                for d in markers
            ],
            "objects": [
                {"id": r.object_id, "kind": r.kind, "err_px": round(r.rms_error, 3)}
                for r in records
            ],
            "rates": rates,
            "preview": self._preview_png(),
        }
        return msg

    def _preview_png(self) -> str | None:
        frame = getattr(self.runtime, "last_frame", None)
        if frame is None:
            return None
        try:
            from PIL import Image

            buf = io.BytesIO()
            Image.fromarray(frame.pixels).save(buf, format="PNG")
            return base64.b64encode(buf.getvalue()).decode("ascii")
        except Exception:
            return None

    def _serve_static(self, handler):
        import os

        if self.ui_dir is None:
            handler._json(404, {"error": "ui not bundled"})
            return
        root = os.path.abspath(self.ui_dir)
        rel = handler.path[len("/ui") :].split("?", 1)[0].lstrip("/") or "index.html"
        path = os.path.normpath(os.path.join(root, rel))
        if not path.startswith(root + os.sep):
            handler._json(404, {"error": "not found"})
            return
        if not os.path.isfile(path):
            handler._json(404, {"error": "not found"})
            return
        ctype = {
            ".html": "text/html",
            ".js": "text/javascript",
            ".css": "text/css",
            ".map": "application/json",
            ".svg": "image/svg+xml",
        }.get(os.path.splitext(path)[1], "application/octet-stream")
        with open(path, "rb") as fh:
            handler._send(200, fh.read(), ctype)

    def close(self):
        self._closed = True
        self._server.shutdown()
        self._server.server_close()
