"""Local HTTP service exposing the search and parse tools.

Modes: "live" answers from the network, "record" answers live and
writes a cassette per request, "replay" answers only from cassettes and
fails closed with FixtureMiss for anything unrecorded. Response bodies
are canonical JSON (sorted keys, compact separators), so a replayed
request is byte-identical across runs.
"""

from __future__ import annotations

import errno
import json
import logging
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .errors import BadRequest, FixtureMiss, ToolError
from .fixtures import FixtureStore, canonical_request
from .parsing import Fetcher, ParseConfig, parse
from .search import SearchProvider, SerpHttpProvider, search

log = logging.getLogger(__name__)

MODES = ("live", "record", "replay")


class PortInUse(ToolError):
    code = "port_in_use"
    http_status = 500


class BadConfig(ToolError):
    code = "bad_config"
    http_status = 500


@dataclass
class ServiceConfig:
    port: int = 0
    host: str = "127.0.0.1"
    mode: str = "live"
    fixture_dir: str | Path | None = None
    provider: SearchProvider | None = None
    fetcher: Fetcher | None = None
    parse_config: ParseConfig = field(default_factory=ParseConfig)


def _encode(obj: dict) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


class ToolService:
    """Transport-independent core; the HTTP handler and in-process
    callers (tests, the fixture recorder) share it."""

    def __init__(self, config: ServiceConfig) -> None:
        if config.mode not in MODES:
            raise BadConfig(f"mode must be one of {MODES}, got {config.mode!r}")
        if config.mode in ("record", "replay") and config.fixture_dir is None:
            raise BadConfig(f"{config.mode} mode requires a fixture directory")
        if config.mode == "replay" and not Path(config.fixture_dir).is_dir():
            raise BadConfig(
                f"replay fixture directory not found: {config.fixture_dir}"
            )
        self.config = config
        self.store = (
            FixtureStore(config.fixture_dir) if config.fixture_dir else None
        )
        self._provider = config.provider
        self._fetcher = config.fetcher

    @property
    def provider(self) -> SearchProvider:
        if self._provider is None:
            self._provider = SerpHttpProvider()
        return self._provider

    @property
    def fetcher(self) -> Fetcher:
        if self._fetcher is None:
            self._fetcher = Fetcher()
        return self._fetcher

    def _answer(self, request: dict, compute) -> bytes:
        if self.config.mode == "replay":
            stored = self.store.lookup(request)
            if stored is None:
                raise FixtureMiss(
                    f"no cassette for request {json.dumps(request, sort_keys=True)}"
                )
            return _encode(stored)
        response = compute()
        if self.config.mode == "record":
            self.store.save(request, response)
        return _encode(response)

    def do_search(self, query: str, top_k: int = 10) -> bytes:
        request = canonical_request("search", query=query, top_k=top_k)
        return self._answer(
            request,
            lambda: search(self.provider, query, top_k).to_dict(),
        )

    def do_parse(self, url: str, query: str, mode: str = "auto") -> bytes:
        request = canonical_request("parse", url=url, query=query, mode=mode)
        return self._answer(
            request,
            lambda: parse(
                self.fetcher, url, query, mode, self.config.parse_config
            ).to_dict(),
        )


def _error_body(exc: ToolError) -> bytes:
    payload: dict = {"code": exc.code, "message": str(exc)}
    attempts = getattr(exc, "attempts", None)
    if attempts:
        payload["attempts"] = [[m, o] for m, o in attempts]
    return _encode({"error": payload})


class _Handler(BaseHTTPRequestHandler):
    service: ToolService  # set by serve()

    # required int field; fall back to BadRequest when absent or wrong
    def _read_json(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        if not raw:
            raise BadRequest("empty request body")
        try:
            doc = json.loads(raw.decode("utf-8"))
        except (ValueError, UnicodeDecodeError) as exc:
            raise BadRequest(f"request body is not valid JSON: {exc}")
        if not isinstance(doc, dict):
            raise BadRequest("request body must be a JSON object")
        return doc

    def _send(self, status: int, body: bytes, content_type: str = "application/json") -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self) -> None:  # noqa: N802 (http.server API)
        if self.path == "/healthz":
            self._send(200, b"ok", "text/plain")
        else:
            self._send(404, _encode({"error": {"code": "not_found", "message": self.path}}))

    def do_POST(self) -> None:  # noqa: N802
        try:
            doc = self._read_json()
            if self.path == "/v1/search":
                top_k = doc.get("top_k", 10)
                if not isinstance(top_k, int) or isinstance(top_k, bool):
                    raise BadRequest("top_k must be an integer")
                body = self.service.do_search(str(doc.get("query", "")), top_k)
            elif self.path == "/v1/parse":
                body = self.service.do_parse(
                    str(doc.get("url", "")),
                    str(doc.get("query", "")),
                    str(doc.get("mode", "auto")),
                )
            else:
                self._send(404, _encode({"error": {"code": "not_found", "message": self.path}}))
                return
        except ToolError as exc:
            self._send(exc.http_status, _error_body(exc))
            return
        except Exception as exc:  # pragma: no cover - defensive
            log.exception("unhandled service error")
            self._send(500, _encode({"error": {"code": "tool_error", "message": str(exc)}}))
            return
        self._send(200, body)

    def log_message(self, fmt: str, *args) -> None:
        log.debug("%s - %s", self.address_string(), fmt % args)


@dataclass
class ServiceHandle:
    server: ThreadingHTTPServer
    thread: threading.Thread
    port: int

    @property
    def base_url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    def shutdown(self) -> None:
        self.server.shutdown()
        self.server.server_close()
        self.thread.join(timeout=10)

    def __enter__(self) -> "ServiceHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.shutdown()


def serve(config: ServiceConfig) -> ServiceHandle:
    """Start the service on config.port (0 picks a free port)."""
    service = ToolService(config)
    handler = type("BoundHandler", (_Handler,), {"service": service})
    try:
        server = ThreadingHTTPServer((config.host, config.port), handler)
    except OSError as exc:
        if exc.errno == errno.EADDRINUSE:
            raise PortInUse(f"port {config.port} is already in use")
        raise
    server.daemon_threads = True
    thread = threading.Thread(
        target=lambda: server.serve_forever(poll_interval=0.05), daemon=True
    )
    thread.start()
    return ServiceHandle(server=server, thread=thread, port=server.server_address[1])
