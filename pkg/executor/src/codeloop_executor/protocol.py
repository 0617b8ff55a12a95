"""Line-delimited JSON protocol over stdio.

A single reader thread parses request lines and routes each one to a
per-session lane: a FIFO queue drained by one dispatcher thread, so
requests for the same session are handled strictly in arrival order
while different sessions run concurrently. A single writer thread
emits whole JSON lines from a shared queue, so interleaved sessions
can never corrupt framing. Every request line produces exactly one
response line carrying the same session_id.
"""

from __future__ import annotations

import json
import sys
import threading
from queue import SimpleQueue

from .sessions import (
    DuplicateSession,
    SessionManager,
    UnknownSession,
)

_SENTINEL = None


def _malformed(req: dict, sid: str = "") -> dict:
    op = req.get("op")
    return {
        "op": op if isinstance(op, str) and op else "error",
        "session_id": sid,
        "error": "malformed_request",
    }


def _exec_response(req: dict, manager: SessionManager) -> dict:
    sid = req["session_id"]
    code = req.get("code", "")
    timeout_ms = req.get("timeout_ms")
    if not isinstance(code, str):
        return _malformed(req, sid)
    if timeout_ms is not None and (
        isinstance(timeout_ms, bool) or not isinstance(timeout_ms, int) or timeout_ms <= 0
    ):
        return _malformed(req, sid)
    result = manager.execute(sid, code, timeout_ms)
    resp = {
        "op": "exec",
        "session_id": result.session_id,
        "status": result.status.value,
        "stdout": result.stdout,
        "stderr": result.stderr,
        "elapsed_ms": result.elapsed_ms,
    }
    if not result.namespace_preserved:
        resp["namespace_preserved"] = False
    return resp


def handle_request(req: dict, manager: SessionManager) -> dict:
    op = req.get("op")
    sid = req.get("session_id")
    if not isinstance(sid, str) or not sid:
        return _malformed(req)
    try:
        if op == "open":
            manager.open(sid)
            return {"op": "open", "session_id": sid, "status": "success"}
        if op == "exec":
            return _exec_response(req, manager)
        if op == "close":
            manager.close(sid)
            return {"op": "close", "session_id": sid, "status": "success"}
        return _malformed(req, sid)
    except UnknownSession:
        return {"op": op, "session_id": sid, "error": "unknown_session"}
    except DuplicateSession:
        return {"op": op, "session_id": sid, "error": "duplicate_session"}
    except Exception as exc:
        return {"op": op, "session_id": sid, "error": f"internal: {exc}"}


class _Lane:
    """FIFO dispatcher for one session id."""

    def __init__(self, sid: str, server: "_Server") -> None:
        self.sid = sid
        self.queue: SimpleQueue = SimpleQueue()
        self.thread = threading.Thread(target=self._run, args=(server,), daemon=True)
        self.thread.start()

    def _run(self, server: "_Server") -> None:
        while True:
            req = self.queue.get()
            if req is _SENTINEL:
                return
            resp = handle_request(req, server.manager)
            server.out_q.put(resp)
            # Once the session no longer exists, the lane can go away;
            # a later request for the same id gets a fresh lane.
            gone = (resp.get("op") == "close" and resp.get("status") == "success") or (
                resp.get("error") == "unknown_session"
            )
            if gone and server.retire(self):
                return


class _Server:
    def __init__(self, manager: SessionManager) -> None:
        self.manager = manager
        self.out_q: SimpleQueue = SimpleQueue()
        self._lanes: dict[str, _Lane] = {}
        self._lock = threading.Lock()

    def route(self, req: dict) -> None:
        sid = req.get("session_id")
        if not isinstance(sid, str) or not sid:
            self.out_q.put(_malformed(req))
            return
        with self._lock:
            lane = self._lanes.get(sid)
            if lane is None:
                lane = _Lane(sid, self)
                self._lanes[sid] = lane
            lane.queue.put(req)

    def retire(self, lane: _Lane) -> bool:
        with self._lock:
            if self._lanes.get(lane.sid) is lane and lane.queue.empty():
                del self._lanes[lane.sid]
                return True
        return False

    def drain(self) -> None:
        with self._lock:
            lanes = list(self._lanes.values())
            self._lanes.clear()
        for lane in lanes:
            lane.queue.put(_SENTINEL)
        for lane in lanes:
            lane.thread.join()


def serve(
    stdin=None,
    stdout=None,
    *,
    manager: SessionManager | None = None,
) -> None:
    """Serve until stdin closes; drains in-flight work before returning."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    # An empty manager is falsy (it has __len__), so test identity.
    manager = SessionManager() if manager is None else manager
    server = _Server(manager)

    def writer() -> None:
        while True:
            obj = server.out_q.get()
            if obj is _SENTINEL:
                return
            stdout.write(json.dumps(obj) + "\n")
            stdout.flush()

    writer_thread = threading.Thread(target=writer, daemon=True)
    writer_thread.start()

    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            req = json.loads(line)
            if not isinstance(req, dict):
                raise ValueError("not an object")
        except ValueError:
            server.out_q.put({"op": "error", "session_id": "", "error": "malformed_request"})
            continue
        server.route(req)

    server.drain()
    server.out_q.put(_SENTINEL)
    writer_thread.join()
    manager.close_all()
