"""Hardened mode: one subprocess per session.

The default mode runs every session in one interpreter, which is cheap
but lets a hostile snippet wedge the whole executor. Hardened mode
trades memory for blast radius: each session gets its own child
process running a single-session REPL, and an unresponsive child is
killed and respawned without touching its siblings.
"""

from __future__ import annotations

import json
import subprocess
import sys
import threading
import time
from queue import Empty, SimpleQueue

from .sessions import (
    DEFAULT_TIMEOUT_MS,
    ExecStatus,
    ExecutionResult,
    Session,
)

# Headroom past the in-child timeout before the parent declares the
# child wedged and kills it.
_KILL_GRACE_S = 5.0


def child_main(stdin=None, stdout=None) -> None:
    """Single-session REPL: one JSON request line in, one result line out."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    from .toolbindings import make_bindings

    session = Session("worker", bindings=make_bindings())
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        req = json.loads(line)
        result = session.execute(req.get("code") or "", req.get("timeout_ms"))
        stdout.write(
            json.dumps(
                {
                    "status": result.status.value,
                    "stdout": result.stdout,
                    "stderr": result.stderr,
                    "elapsed_ms": result.elapsed_ms,
                    "namespace_preserved": result.namespace_preserved,
                }
            )
            + "\n"
        )
        stdout.flush()


class _Child:
    """A worker subprocess with a background line reader."""

    def __init__(self) -> None:
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "codeloop_executor", "--worker"],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
        )
        self.lines: SimpleQueue = SimpleQueue()
        reader = threading.Thread(target=self._read, daemon=True)
        reader.start()

    def _read(self) -> None:
        assert self.proc.stdout is not None
        for line in self.proc.stdout:
            self.lines.put(line)
        self.lines.put(None)

    def send(self, payload: dict) -> None:
        assert self.proc.stdin is not None
        self.proc.stdin.write(json.dumps(payload) + "\n")
        self.proc.stdin.flush()

    def kill(self) -> None:
        self.proc.kill()
        self.proc.wait()


class HardenedSession:
    """Session facade backed by a dedicated subprocess.

    Same execute/close surface as Session, so SessionManager can use it
    as a drop-in factory. A timeout or crash costs the namespace: the
    child is replaced with a fresh one and the result says so.
    """

    def __init__(self, session_id: str) -> None:
        self.session_id = session_id
        self._lock = threading.Lock()
        self._child: _Child | None = _Child()

    def _respawn(self) -> None:
        if self._child is not None:
            self._child.kill()
        self._child = _Child()

    def execute(self, code: str, timeout_ms: int | None = None) -> ExecutionResult:
        timeout_ms = DEFAULT_TIMEOUT_MS if timeout_ms is None else timeout_ms
        if timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")
        with self._lock:
            if self._child is None:
                raise RuntimeError(f"session {self.session_id!r} is closed")
            started = time.monotonic()
            try:
                self._child.send({"code": code, "timeout_ms": timeout_ms})
            except OSError:
                self._respawn()
                return self._lost(started, ExecStatus.KILLED, timeout_ms)
            try:
                line = self._child.lines.get(
                    timeout=timeout_ms / 1000 + _KILL_GRACE_S
                )
            except Empty:
                self._respawn()
                return self._lost(started, ExecStatus.TIMEOUT, timeout_ms)
            if line is None:
                self._respawn()
                return self._lost(started, ExecStatus.KILLED, timeout_ms)
            payload = json.loads(line)
            return ExecutionResult(
                session_id=self.session_id,
                status=ExecStatus(payload["status"]),
                stdout=payload["stdout"],
                stderr=payload["stderr"],
                elapsed_ms=payload["elapsed_ms"],
                namespace_preserved=payload.get("namespace_preserved", True),
            )

    def _lost(
        self, started: float, status: ExecStatus, timeout_ms: int
    ) -> ExecutionResult:
        elapsed = int((time.monotonic() - started) * 1000)
        if status is ExecStatus.TIMEOUT:
            elapsed = max(elapsed, timeout_ms)
        return ExecutionResult(
            session_id=self.session_id,
            status=status,
            stderr="[worker process replaced; session state lost]",
            elapsed_ms=elapsed,
            namespace_preserved=False,
        )

    def close(self) -> None:
        with self._lock:
            if self._child is not None:
                self._child.kill()
                self._child = None
