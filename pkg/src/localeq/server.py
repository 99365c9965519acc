"""HTTP/1.1 prediction service on the standard-library threading server.

The model and calibration load once and are read-only afterwards, so
concurrent handlers share them without locks.
"""
from __future__ import annotations

import json
import logging
import math
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from . import checkpoint
from .models import ModelBundle, UnknownLocaleError, predict

log = logging.getLogger(__name__)

MAX_BODY = 1 << 16
DEFAULT_THRESHOLD = 0.5


class RequestError(ValueError):
    def __init__(self, status: int, msg: str):
        super().__init__(msg)
        self.status = status


def parse_bind(bind: str) -> tuple[str, int]:
    host, sep, port = bind.rpartition(":")
    if not sep or not port.isdigit() or not 0 <= int(port) < 65536:
        raise ValueError(f"bind address must be host:port, got {bind!r}")
    return host or "127.0.0.1", int(port)


def load_calibration(path) -> dict:
    cal = json.loads(Path(path).read_text(encoding="utf-8"))
    thresholds = cal.get("thresholds", {})
    if not isinstance(thresholds, dict):
        raise ValueError("calibration 'thresholds' must map locale codes to numbers")
    for loc, t in list(thresholds.items()) + [("default", cal.get("default"))]:
        if t is not None and not (isinstance(t, (int, float)) and 0.0 <= t <= 1.0):
            raise ValueError(f"calibration threshold for {loc!r} must be in [0, 1]")
    return {"thresholds": dict(thresholds), "default": cal.get("default")}


class Predictor:
    """Turns a decoded request object into (status, response object)."""

    def __init__(self, bundle: ModelBundle, calibration: dict | None = None, model_version: str = ""):
        self.bundle = bundle
        self.calibration = calibration or {"thresholds": {}, "default": None}
        self.model_version = model_version or bundle.variant.value

    def threshold_for(self, locale: str) -> float:
        t = self.calibration["thresholds"].get(locale)
        if t is None:
            t = self.calibration.get("default")
        return DEFAULT_THRESHOLD if t is None else float(t)

    def parse(self, obj) -> tuple[str, str, float]:
        if not isinstance(obj, dict):
            raise RequestError(400, "request body must be a JSON object")
        unknown = set(obj) - {"locale", "query", "threshold"}
        if unknown:
            raise RequestError(400, f"unknown fields {sorted(unknown)}")
        locale, query, threshold = obj.get("locale"), obj.get("query"), obj.get("threshold")
        if not isinstance(locale, str) or not isinstance(query, str):
            raise RequestError(400, "'locale' and 'query' must be strings")
        if not query.strip():
            raise RequestError(422, "query is empty")
        if threshold is None:
            threshold = self.threshold_for(locale)
        elif isinstance(threshold, bool) or not isinstance(threshold, (int, float)) \
                or not math.isfinite(threshold) or not 0.0 <= threshold <= 1.0:
            raise RequestError(400, "'threshold' must be a number in [0, 1]")
        return locale, query, float(threshold)

    def handle(self, obj) -> tuple[int, dict]:
        try:
            locale, query, threshold = self.parse(obj)
        except RequestError as e:
            return e.status, {"error": str(e)}
        known = self.bundle.locales.get(locale) is not None
        try:
            hits = predict(self.bundle, query, locale, threshold)
        except UnknownLocaleError as e:
            return 422, {"error": str(e.args[0]), "locale_known": False}
        return 200, {
            "product_types": [{"name": pt.name, "score": score} for pt, score in hits],
            "refused": not hits,
            "locale_known": known,
            "threshold": threshold,
            "model_version": self.model_version,
        }


def encode(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, ensure_ascii=False) + "\n").encode("utf-8")


class Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "localeq"
    predictor: Predictor  # set on the subclass made by make_server

    def log_message(self, fmt, *args):
        log.debug("%s " + fmt, self.address_string(), *args)

    def _send(self, status: int, body: bytes, ctype="application/json"):
        self.send_response(status)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        if self.path == "/healthz":
            self._send(200, b"ok\n", "text/plain; charset=utf-8")
        elif self.path == "/version":
            self._send(200, encode({"model_version": self.predictor.model_version}))
        else:
            self._send(404, encode({"error": "not found"}))

    def do_POST(self):
        if self.path != "/predict":
            self._discard_body()
            self._send(404, encode({"error": "not found"}))
            return
        ctype = self.headers.get("Content-Type", "").split(";")[0].strip().lower()
        try:
            length = int(self.headers.get("Content-Length", ""))
        except ValueError:
            self.close_connection = True
            self._send(411, encode({"error": "Content-Length required"}))
            return
        if length < 0 or length > MAX_BODY:
            self.close_connection = True
            self._send(413, encode({"error": "request body too large"}))
            return
        raw = self.rfile.read(length)
        if ctype != "application/json":
            self._send(415, encode({"error": "Content-Type must be application/json"}))
            return
        try:
            obj = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            self._send(400, encode({"error": f"malformed JSON: {e}"}))
            return
        status, body = self.predictor.handle(obj)
        self._send(status, encode(body))

    def _discard_body(self):
        try:
            n = int(self.headers.get("Content-Length", "0"))
        except ValueError:
            n = 0
        if 0 < n <= MAX_BODY:
            self.rfile.read(n)


class _Server(ThreadingHTTPServer):
    # socketserver's backlog of 5 resets bursts of concurrent connects
    request_queue_size = 128
    daemon_threads = True


def make_server(predictor: Predictor, bind: str = "127.0.0.1:8080") -> ThreadingHTTPServer:
    handler = type("BoundHandler", (Handler,), {"predictor": predictor})
    return _Server(parse_bind(bind), handler)


def load_predictor(model_path, calibration_path=None) -> Predictor:
    data = Path(model_path).read_bytes()
    bundle = checkpoint.from_bytes(data)
    calibration = load_calibration(calibration_path) if calibration_path else None
    return Predictor(bundle, calibration, f"{bundle.variant.value}-{checkpoint.digest(data)}")

