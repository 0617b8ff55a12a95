"""Sandbox sessions the agent runtime dispatches code to.

Two implementations share one small interface (``execute`` / ``close``):

* :class:`ScriptedSandboxSession`: in-process canned results for tests
  and offline demo runs; no code is actually executed.
* :class:`ExecutorProcess` / :class:`ExecutorSession`: client for the
  external executor speaking line-delimited JSON over stdio. The wire
  protocol is the only coupling: requests are
  ``{"op": "open"|"exec"|"close", "session_id", "code"?, "timeout_ms"?}``
  and every request gets exactly one response line
  ``{"op", "session_id", "status"?, "stdout"?, "stderr"?, "elapsed_ms"?,
  "error"?}`` with a matching session_id.
"""

from __future__ import annotations

import json
import os
import subprocess
import sys
import threading
import uuid
from dataclasses import dataclass
from enum import Enum
from queue import Empty, SimpleQueue
from typing import Callable, Iterable, Protocol


class ExecStatus(str, Enum):
    SUCCESS = "success"
    EXCEPTION_RAISED = "exception_raised"
    TIMEOUT = "timeout"
    KILLED = "killed"


@dataclass
class ExecutionResult:
    session_id: str
    status: ExecStatus
    stdout: str = ""
    stderr: str = ""
    elapsed_ms: int = 0


class SandboxError(RuntimeError):
    """Session-level failure (dead executor, protocol violation)."""


class UnknownSession(SandboxError):
    pass


class DuplicateSession(SandboxError):
    pass


class SandboxSession(Protocol):
    session_id: str

    def execute(
        self, code: str, timeout_ms: int | None = None
    ) -> ExecutionResult: ...

    def close(self) -> None: ...


class ScriptedSandboxSession:
    """Returns canned results in order; records every dispatched source.

    A step may be an :class:`ExecutionResult`, a plain string (treated
    as stdout of a success), or a ``(stdout, stderr)`` pair (non-empty
    stderr implies an exception status). When steps run out,
    ``responder(code)`` answers if given, else an empty success.
    """

    def __init__(
        self,
        steps: Iterable = (),
        *,
        responder: Callable[[str], object] | None = None,
        session_id: str = "scripted",
    ) -> None:
        self.session_id = session_id
        self._steps = list(steps)
        self._responder = responder
        self.executed: list[str] = []
        self.closed = False
        self._lock = threading.Lock()

    def _norm(self, step) -> ExecutionResult:
        if isinstance(step, ExecutionResult):
            return step
        if isinstance(step, tuple):
            stdout, stderr = step
            status = (
                ExecStatus.EXCEPTION_RAISED if stderr else ExecStatus.SUCCESS
            )
            return ExecutionResult(self.session_id, status, stdout, stderr, 1)
        return ExecutionResult(
            self.session_id, ExecStatus.SUCCESS, str(step), "", 1
        )

    def execute(
        self, code: str, timeout_ms: int | None = None
    ) -> ExecutionResult:
        with self._lock:
            if self.closed:
                raise UnknownSession(self.session_id)
            self.executed.append(code)
            if self._steps:
                return self._norm(self._steps.pop(0))
            if self._responder is not None:
                return self._norm(self._responder(code))
            return ExecutionResult(self.session_id, ExecStatus.SUCCESS, "", "", 0)

    def close(self) -> None:
        self.closed = True


class ExecutorProcess:
    """Launches and supervises one external executor process.

    Many sessions share the process; requests are serialized onto stdin
    and responses are routed back by session_id (the executor runs one
    request at a time per session, so a per-session queue suffices).
    """

    def __init__(
        self,
        argv: list[str] | None = None,
        *,
        tool_service_url: str | None = None,
        hardened: bool = False,
        env: dict | None = None,
    ) -> None:
        if argv is None:
            argv = [sys.executable, "-m", "codeloop_executor"]
            if hardened:
                argv.append("--hardened")
        full_env = dict(os.environ if env is None else env)
        if tool_service_url:
            full_env["TOOL_SERVICE_URL"] = tool_service_url
        self._proc = subprocess.Popen(
            argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
            env=full_env,
        )
        self._wlock = threading.Lock()
        self._plock = threading.Lock()
        self._pending: dict[str, SimpleQueue] = {}
        self._dead = False
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        for line in self._proc.stdout:
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                continue  # stray noise on stdout must not kill routing
            with self._plock:
                q = self._pending.get(obj.get("session_id"))
            if q is not None:
                q.put(obj)
        self._dead = True
        with self._plock:
            for q in self._pending.values():
                q.put(None)

    def _request(self, obj: dict, timeout_s: float) -> dict:
        sid = obj["session_id"]
        with self._plock:
            q = self._pending.setdefault(sid, SimpleQueue())
        if self._dead:
            raise SandboxError("executor process is not running")
        with self._wlock:
            try:
                self._proc.stdin.write(json.dumps(obj) + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, ValueError) as exc:
                raise SandboxError(f"executor stdin closed: {exc}") from exc
        try:
            resp = q.get(timeout=timeout_s)
        except Empty:
            raise SandboxError(
                f"no response for {obj.get('op')} within {timeout_s}s"
            ) from None
        if resp is None:
            raise SandboxError("executor process exited")
        err = resp.get("error")
        if err == "unknown_session":
            raise UnknownSession(sid)
        if err == "duplicate_session":
            raise DuplicateSession(sid)
        if err:
            raise SandboxError(err)
        return resp

    def open_session(
        self, session_id: str | None = None, *, timeout_s: float = 30.0
    ) -> "ExecutorSession":
        sid = session_id or uuid.uuid4().hex
        self._request({"op": "open", "session_id": sid}, timeout_s)
        return ExecutorSession(self, sid)

    def shutdown(self, timeout_s: float = 5.0) -> None:
        try:
            if self._proc.stdin:
                self._proc.stdin.close()
            self._proc.wait(timeout=timeout_s)
        except Exception:
            self._proc.kill()
            self._proc.wait()

    def __enter__(self) -> "ExecutorProcess":
        return self

    def __exit__(self, *exc) -> None:
        self.shutdown()


class ExecutorSession:
    def __init__(self, proc: ExecutorProcess, session_id: str) -> None:
        self._proc = proc
        self.session_id = session_id

    def execute(
        self, code: str, timeout_ms: int | None = None
    ) -> ExecutionResult:
        req: dict = {"op": "exec", "session_id": self.session_id, "code": code}
        if timeout_ms is not None:
            req["timeout_ms"] = timeout_ms
        # Generous grace over the in-sandbox timeout so the executor,
        # not this client, decides the Timeout status.
        wait_s = ((timeout_ms or 120_000) / 1000.0) + 30.0
        resp = self._proc._request(req, wait_s)
        return ExecutionResult(
            session_id=self.session_id,
            status=ExecStatus(resp["status"]),
            stdout=resp.get("stdout", ""),
            stderr=resp.get("stderr", ""),
            elapsed_ms=int(resp.get("elapsed_ms", 0)),
        )

    def close(self) -> None:
        self._proc._request(
            {"op": "close", "session_id": self.session_id}, 30.0
        )
