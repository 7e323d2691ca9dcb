"""Wire protocol for remote encoder providers, plus its conformance suite.

Transport is newline-delimited JSON over a local socket (tcp host:port or
a unix domain socket). One request line, one response line:

  -> {"op": "encode", "texts": ["a photo", ...]}
  <- {"dim": 512, "embeddings": [[...], ...]}

Any failure is reported in-band as {"error": "<message>"}; the server must
answer every line and never drop the connection on bad input. Embedding
rows are float32 values (serialized as JSON numbers), unit-norm within
1e-5, in input order. Identical request lines must produce byte-identical
response lines.
"""

from __future__ import annotations

import json
import socket
import socketserver
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import ProviderFailureError

UNIT_ATOL = 1e-5
_MAX_LINE = 64 * 1024 * 1024


def parse_address(addr: str) -> tuple[str, object]:
    """"host:port" -> ("tcp", (host, port)); anything with a slash is a
    unix socket path."""
    if "/" in addr:
        return ("unix", addr)
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"bad endpoint address {addr!r}")
    return ("tcp", (host or "127.0.0.1", int(port)))


def _connect(addr: str, timeout: float) -> socket.socket:
    kind, target = parse_address(addr)
    if kind == "unix":
        sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
    else:
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.settimeout(timeout)
    sock.connect(target)
    return sock


class RawLineClient:
    """One-line-in, one-line-out JSON transport. Used by the client
    provider and, with raw strings, by the conformance checks."""

    def __init__(self, addr: str, timeout: float = 30.0):
        self._addr = addr
        self._timeout = timeout
        self._sock: socket.socket | None = None
        self._file = None

    def _ensure(self) -> None:
        if self._sock is None:
            self._sock = _connect(self._addr, self._timeout)
            self._file = self._sock.makefile("rwb")

    def request_line(self, line: bytes) -> bytes:
        try:
            self._ensure()
            self._file.write(line + b"\n")
            self._file.flush()
            resp = self._file.readline(_MAX_LINE)
        except OSError as exc:
            self.close()
            raise ProviderFailureError(f"endpoint {self._addr}: {exc}")
        if not resp:
            self.close()
            raise ProviderFailureError(f"endpoint {self._addr}: connection closed")
        return resp.rstrip(b"\n")

    def request(self, obj: dict) -> dict:
        resp = self.request_line(json.dumps(obj, ensure_ascii=False).encode("utf-8"))
        try:
            parsed = json.loads(resp)
        except json.JSONDecodeError as exc:
            raise ProviderFailureError(f"endpoint {self._addr}: bad response: {exc}")
        if not isinstance(parsed, dict):
            raise ProviderFailureError(f"endpoint {self._addr}: non-object response")
        return parsed

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None
                self._file = None


class EndpointProvider:
    """EncoderProvider backed by a wire-protocol endpoint.

    The protocol has no dedicated dim op, so dim() encodes a one-element
    probe batch on first use and caches the reported dim.
    """

    def __init__(self, addr: str, timeout: float = 30.0):
        parse_address(addr)  # fail fast on garbage
        self._client = RawLineClient(addr, timeout)
        self._dim: int | None = None

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        resp = self._client.request({"op": "encode", "texts": list(texts)})
        if "error" in resp:
            raise ProviderFailureError(f"endpoint error: {resp['error']}")
        if "dim" not in resp or "embeddings" not in resp:
            raise ProviderFailureError("response missing dim/embeddings")
        dim = resp["dim"]
        rows = resp["embeddings"]
        if not isinstance(dim, int) or dim < 1:
            raise ProviderFailureError(f"bad dim {dim!r}")
        if not isinstance(rows, list) or len(rows) != len(texts):
            raise ProviderFailureError(
                f"{len(rows) if isinstance(rows, list) else '?'} rows for {len(texts)} texts"
            )
        try:
            out = np.asarray(rows, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise ProviderFailureError(f"non-numeric embeddings: {exc}")
        if out.shape != (len(texts), dim):
            raise ProviderFailureError(f"ragged embeddings, shape {out.shape}")
        if len(texts) and not np.isfinite(out).all():
            raise ProviderFailureError("non-finite embedding values")
        if len(texts):
            norms = np.linalg.norm(out, axis=1)
            worst = float(np.abs(norms - 1.0).max())
            if worst > UNIT_ATOL:
                raise ProviderFailureError(f"row norm off unit by {worst:.2e}")
        if self._dim is None:
            self._dim = dim
        elif self._dim != dim:
            raise ProviderFailureError(f"dim changed from {self._dim} to {dim}")
        return out.astype(np.float32)

    def dim(self) -> int:
        if self._dim is None:
            self.encode_texts([""])
        return self._dim

    def close(self) -> None:
        self._client.close()


# ---------------------------------------------------------------------------
# server (in-process, used by tests and the synthetic endpoint)
# ---------------------------------------------------------------------------


def handle_request_line(provider, line: bytes) -> bytes:
    """Map one request line to one response line. Never raises."""
    try:
        req = json.loads(line)
    except json.JSONDecodeError as exc:
        return _error_line(f"malformed JSON: {exc.msg}")
    if not isinstance(req, dict):
        return _error_line("request must be a JSON object")
    op = req.get("op")
    if op != "encode":
        return _error_line(f"unknown op {op!r}")
    texts = req.get("texts")
    if not isinstance(texts, list) or not all(isinstance(t, str) for t in texts):
        return _error_line("texts must be an array of strings")
    try:
        rows = provider.encode_texts(texts)
        payload = {
            "dim": int(provider.dim()),
            "embeddings": [[float(v) for v in row] for row in np.asarray(rows)],
        }
        return json.dumps(payload, ensure_ascii=False).encode("utf-8")
    except Exception as exc:  # provider bugs become in-band errors
        return _error_line(f"encode failed: {exc}")


def _error_line(msg: str) -> bytes:
    return json.dumps({"error": msg}, ensure_ascii=False).encode("utf-8")


class ProviderServer:
    """Threaded tcp server exposing a provider over the wire protocol."""

    def __init__(self, provider, host: str = "127.0.0.1", port: int = 0):
        outer = self

        class Handler(socketserver.StreamRequestHandler):
            def handle(self) -> None:
                while True:
                    line = self.rfile.readline(_MAX_LINE)
                    if not line:
                        return
                    resp = handle_request_line(outer._provider, line.rstrip(b"\r\n"))
                    self.wfile.write(resp + b"\n")
                    self.wfile.flush()

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._provider = provider
        self._server = Server((host, port), Handler)
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> str:
        host, port = self._server.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> "ProviderServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None

    def __enter__(self) -> "ProviderServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


# ---------------------------------------------------------------------------
# conformance
# ---------------------------------------------------------------------------

_PROBE_TEXTS = [
    "one red dog running small tree",
    "two small cat sleeping bright house",
    "",
    "many old boat floating quiet river",
]


@dataclass
class ConformanceReport:
    address: str
    dim: int = 0
    checks: list[str] = field(default_factory=list)


def check_endpoint_conformance(addr: str, probe_texts: list[str] | None = None) -> ConformanceReport:
    """Drive the protocol checks every conforming endpoint must pass.

    Checks: response shape, unit-norm rows, input-order preservation,
    byte-identical responses for identical request lines, in-band error
    JSON for malformed/unknown/ill-typed requests, and that the connection
    survives bad input. Raises ProviderFailureError (with the failing
    check named) on the first violation; returns the report otherwise.
    """
    texts = list(probe_texts) if probe_texts else list(_PROBE_TEXTS)
    if len(texts) < 2:
        raise ValueError("need at least two probe texts")
    report = ConformanceReport(address=addr)
    client = RawLineClient(addr)

    def fail(check: str, detail: str) -> None:
        raise ProviderFailureError(f"conformance [{check}] at {addr}: {detail}")

    def passed(check: str) -> None:
        report.checks.append(check)

    try:
        # shape and norms
        req = json.dumps({"op": "encode", "texts": texts}, ensure_ascii=False).encode()
        first = client.request_line(req)
        resp = json.loads(first)
        if "error" in resp:
            fail("shape", f"error on valid request: {resp['error']}")
        dim, rows = resp.get("dim"), resp.get("embeddings")
        if not isinstance(dim, int) or dim < 1:
            fail("shape", f"bad dim {dim!r}")
        if not isinstance(rows, list) or len(rows) != len(texts):
            fail("shape", "row count != text count")
        if any(len(r) != dim for r in rows):
            fail("shape", "ragged rows")
        report.dim = dim
        passed("shape")

        mat = np.asarray(rows, dtype=np.float64)
        if not np.isfinite(mat).all():
            fail("unit-norm", "non-finite values")
        worst = float(np.abs(np.linalg.norm(mat, axis=1) - 1.0).max())
        if worst > UNIT_ATOL:
            fail("unit-norm", f"row norm off unit by {worst:.2e}")
        passed("unit-norm")

        # byte-identical on identical request lines
        second = client.request_line(req)
        if second != first:
            fail("determinism", "identical requests gave different bytes")
        passed("determinism")

        # order preservation: reversed input gives reversed rows
        rev = client.request({"op": "encode", "texts": texts[::-1]})
        if "error" in rev:
            fail("order", f"error on reversed request: {rev['error']}")
        rev_mat = np.asarray(rev["embeddings"], dtype=np.float64)
        if rev_mat.shape != mat.shape or not np.array_equal(rev_mat, mat[::-1]):
            fail("order", "rows do not track input order")
        passed("order")

        # empty batch is legal
        empty = client.request({"op": "encode", "texts": []})
        if "error" in empty or empty.get("embeddings") != []:
            fail("empty-batch", f"bad response {empty!r}")
        passed("empty-batch")

        # error JSON, connection kept alive after each bad line
        for check, bad in [
            ("error-malformed", b"{not json"),
            ("error-unknown-op", json.dumps({"op": "destroy"}).encode()),
            ("error-bad-texts", json.dumps({"op": "encode", "texts": [1, 2]}).encode()),
            ("error-missing-texts", json.dumps({"op": "encode"}).encode()),
        ]:
            resp_line = client.request_line(bad)
            parsed = json.loads(resp_line)
            if not isinstance(parsed, dict) or not isinstance(parsed.get("error"), str):
                fail(check, f"expected error JSON, got {resp_line[:120]!r}")
            alive = client.request({"op": "encode", "texts": [texts[0]]})
            if "error" in alive:
                fail(check, "endpoint unusable after bad input")
            passed(check)
    finally:
        client.close()
    return report
