"""Wire-protocol server: newline-delimited JSON text encoding.

One request line, one response line, per the consuming pipeline's provider
protocol:

  -> {"op": "encode", "texts": [...]}
  <- {"dim": D, "embeddings": [[...], ...]}      rows unit-norm, input order
  <- {"error": "<message>"}                      on any bad input

Every line gets an answer; bad input never drops the connection and the
process never dies on a request. Handling is serialized (throughput is not
a goal), and responses to identical request lines are byte-identical
because the backends are deterministic.
"""

from __future__ import annotations

import json
import os
import socketserver
import threading

import numpy as np

from .backends import Backend

_MAX_LINE = 64 * 1024 * 1024


def handle_request_line(backend: Backend, line: bytes) -> bytes:
    """One request line to one response line. Never raises."""
    try:
        req = json.loads(line)
    except json.JSONDecodeError as exc:
        return _error(f"malformed JSON: {exc.msg}")
    if not isinstance(req, dict):
        return _error("request must be a JSON object")
    if req.get("op") != "encode":
        return _error(f"unknown op {req.get('op')!r}")
    texts = req.get("texts")
    if not isinstance(texts, list) or not all(isinstance(t, str) for t in texts):
        return _error("texts must be an array of strings")
    try:
        rows = np.asarray(backend.encode_texts(texts), dtype=np.float32)
        payload = {
            "dim": int(backend.dim),
            "embeddings": [[float(v) for v in row] for row in rows],
        }
        return json.dumps(payload, ensure_ascii=False).encode("utf-8")
    except Exception as exc:  # backend trouble is reported in-band
        return _error(f"encode failed: {exc}")


def _error(msg: str) -> bytes:
    return json.dumps({"error": msg}, ensure_ascii=False).encode("utf-8")


class ExporterServer:
    """Serialized single-process server over tcp ("host:port") or a unix
    socket (any address containing a slash)."""

    def __init__(self, backend: Backend, address: str = "127.0.0.1:0"):
        outer = self

        class Handler(socketserver.StreamRequestHandler):
            def handle(self) -> None:
                while True:
                    line = self.rfile.readline(_MAX_LINE)
                    if not line:
                        return
                    resp = handle_request_line(outer._backend, line.rstrip(b"\r\n"))
                    self.wfile.write(resp + b"\n")
                    self.wfile.flush()

        self._backend = backend
        self._unix_path: str | None = None
        if "/" in address:
            if os.path.exists(address):
                os.unlink(address)

            class Server(socketserver.UnixStreamServer):
                pass

            self._server = Server(address, Handler)
            self._unix_path = address
        else:
            host, _, port = address.rpartition(":")

            class Server(socketserver.TCPServer):
                allow_reuse_address = True

            self._server = Server((host or "127.0.0.1", int(port)), Handler)
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> str:
        if self._unix_path is not None:
            return self._unix_path
        host, port = self._server.server_address[:2]
        return f"{host}:{port}"

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def start(self) -> "ExporterServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._unix_path is not None and os.path.exists(self._unix_path):
            os.unlink(self._unix_path)
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None

    def __enter__(self) -> "ExporterServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
