"""Threaded HTTP scoring service on the standard library server.

POST /predict accepts a WAV clip (base64 inside a JSON body, or a
multipart form as a convenience) plus the two clinical flags and returns
the screening probability. GET /healthz reports readiness. The model is
loaded before the socket is bound so a bad model path fails fast instead
of serving 500s.
"""

from __future__ import annotations

import base64
import binascii
import json
import logging
from email import policy
from email.parser import BytesParser
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from . import model as model_mod
from .audio_io import EmptyAudio, MalformedContainer, UnsupportedCodec, decode_wav
from .dataset import ClinicalFlags
from .dsp import extract_features, feature_digest

log = logging.getLogger(__name__)

MAX_BODY_BYTES = 10 * 1024 * 1024
# How much of an oversized body is read and discarded so the client can
# still receive the 413 instead of a broken pipe; beyond this, hang up.
DRAIN_CAP_BYTES = 64 * 1024 * 1024

_FLAG_FIELDS = ("respiratory_condition", "fever_or_myalgia")


class RequestError(Exception):
    """Client error carrying an HTTP status and a machine-readable code."""

    def __init__(self, status: int, code: str, detail: str = ""):
        super().__init__(detail or code)
        self.status = status
        self.code = code
        self.detail = detail


class App:
    """Request-independent state: the loaded model and its version tag."""

    def __init__(self, params=None):
        self.params = params
        if params is not None:
            data_hash = params.meta.get("data_hash", "")
            suffix = f"+{data_hash[:12]}" if data_hash else ""
            self.model_version = f"{model_mod.LIB_VERSION}{suffix}"
        else:
            self.model_version = None

    @property
    def ready(self) -> bool:
        return self.params is not None

    def predict(self, wav_bytes: bytes, flags: ClinicalFlags) -> dict:
        try:
            clip = decode_wav(wav_bytes)
        except UnsupportedCodec as exc:
            raise RequestError(400, "unsupported_codec", str(exc))
        except MalformedContainer as exc:
            raise RequestError(400, "malformed_container", str(exc))
        except EmptyAudio as exc:
            raise RequestError(400, "empty_audio", str(exc))
        fv = extract_features(clip, flags)
        probability = float(model_mod.forward(self.params, [fv])[0])
        return {
            "probability": probability,
            "label": "positive" if probability >= 0.5 else "negative",
            "model_version": self.model_version,
            "feature_digest": feature_digest(fv),
        }


def _parse_flag(raw) -> int:
    if isinstance(raw, bool):
        raise RequestError(400, "invalid_flag", f"flag must be 0 or 1, got {raw!r}")
    if isinstance(raw, (int, float)) and raw in (0, 1):
        return int(raw)
    if isinstance(raw, str) and raw.strip() in ("0", "1"):
        return int(raw.strip())
    raise RequestError(400, "invalid_flag", f"flag must be 0 or 1, got {raw!r}")


def _flags_from(fields: dict) -> ClinicalFlags:
    values = {}
    for name in _FLAG_FIELDS:
        values[name] = _parse_flag(fields[name]) if name in fields else 0
    return ClinicalFlags(**values)


def _parse_json_body(body: bytes) -> tuple:
    try:
        payload = json.loads(body)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise RequestError(400, "invalid_json", str(exc))
    if not isinstance(payload, dict):
        raise RequestError(400, "invalid_json", "body must be a JSON object")
    if "audio_b64" not in payload:
        raise RequestError(400, "missing_field", "audio_b64 is required")
    if not isinstance(payload["audio_b64"], str):
        raise RequestError(400, "bad_base64", "audio_b64 must be a string")
    try:
        wav = base64.b64decode(payload["audio_b64"], validate=True)
    except (binascii.Error, ValueError) as exc:
        raise RequestError(400, "bad_base64", str(exc))
    return wav, _flags_from(payload)


def _parse_multipart_body(body: bytes, content_type: str) -> tuple:
    # The email package already speaks MIME; wrap the body in a minimal
    # header so its parser handles boundary splitting and part decoding.
    prefix = f"Content-Type: {content_type}\r\n\r\n".encode("ascii")
    msg = BytesParser(policy=policy.default).parsebytes(prefix + body)
    if not msg.is_multipart():
        raise RequestError(400, "invalid_multipart", "could not parse form parts")
    wav = None
    fields: dict = {}
    for part in msg.iter_parts():
        name = part.get_param("name", header="content-disposition")
        if name == "audio":
            wav = part.get_payload(decode=True)
        elif name in _FLAG_FIELDS:
            fields[name] = part.get_content().strip()
    if wav is None:
        raise RequestError(400, "missing_field", "audio part is required")
    return wav, _flags_from(fields)


def make_handler(app: App):
    class Handler(BaseHTTPRequestHandler):
        server_version = "coughscreen/" + model_mod.LIB_VERSION
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            log.info("%s %s", self.address_string(), fmt % args)

        def _send_json(self, status: int, payload: dict) -> None:
            body = json.dumps(payload, sort_keys=True).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            if self.path != "/healthz":
                self._send_json(404, {"error": "not_found"})
                return
            if app.ready:
                self._send_json(200, {"status": "ok", "model_version": app.model_version})
            else:
                self._send_json(503, {"status": "loading"})

        def do_POST(self):
            if self.path != "/predict":
                self._drain_declared()  # keep the connection parseable
                self._send_json(404, {"error": "not_found"})
                return
            try:
                result = self._handle_predict()
            except RequestError as exc:
                self._send_json(exc.status, {"error": exc.code, "detail": exc.detail})
                return
            except Exception:
                log.exception("predict failed")
                self._send_json(500, {"error": "internal_error"})
                return
            self._send_json(200, result)

        def _drain(self, length: int) -> None:
            remaining = min(length, DRAIN_CAP_BYTES)
            while remaining > 0:
                chunk = self.rfile.read(min(remaining, 1 << 16))
                if not chunk:
                    break
                remaining -= len(chunk)

        def _drain_declared(self) -> None:
            """Consume an unprocessed request body so keep-alive stays in sync."""
            try:
                length = int(self.headers.get("Content-Length", "0"))
            except ValueError:
                self.close_connection = True
                return
            if length > 0:
                self._drain(length)
            if length > DRAIN_CAP_BYTES:
                self.close_connection = True

        def _handle_predict(self) -> dict:
            if not app.ready:
                raise RequestError(503, "model_not_loaded")
            length_header = self.headers.get("Content-Length")
            if length_header is None:
                self.close_connection = True  # body length unknowable
                raise RequestError(411, "length_required")
            try:
                length = int(length_header)
            except ValueError:
                self.close_connection = True
                raise RequestError(400, "invalid_length")
            if length > MAX_BODY_BYTES:
                self._drain(length)
                self.close_connection = True
                raise RequestError(413, "payload_too_large",
                                   f"body {length} exceeds {MAX_BODY_BYTES}")
            body = self.rfile.read(length)
            content_type = self.headers.get("Content-Type", "")
            base_type = content_type.split(";")[0].strip().lower()
            if base_type == "multipart/form-data":
                wav, flags = _parse_multipart_body(body, content_type)
            elif base_type in ("application/json", ""):
                wav, flags = _parse_json_body(body)
            else:
                raise RequestError(400, "unsupported_media_type", base_type)
            if len(wav) > MAX_BODY_BYTES:
                raise RequestError(413, "payload_too_large", "decoded audio too large")
            return app.predict(wav, flags)

    return Handler


def create_server(model_path, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    """Load the model, then bind. Raises before any socket work when the
    model file is missing or corrupt."""
    params = model_mod.load(model_path)
    app = App(params)
    httpd = ThreadingHTTPServer((host, port), make_handler(app))
    httpd.daemon_threads = True
    return httpd


def run(model_path, host: str = "127.0.0.1", port: int = 8000) -> None:
    httpd = create_server(model_path, host, port)
    log.info("serving on %s:%d", *httpd.server_address[:2])
    try:
        httpd.serve_forever()
    finally:
        httpd.server_close()
