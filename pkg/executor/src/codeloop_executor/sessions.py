"""Interpreter sessions: one persistent namespace per session.

Many sessions share this process; isolation is at namespace level.
stdout/stderr are routed per execution thread so concurrent sessions
never mix output, each stream is capped per execution to protect the
wire protocol, and a bare final expression echoes its repr the way a
notebook cell does.

Timeouts run every execution on its own thread: when the deadline
passes, the thread gets a cancellation exception injected and is
abandoned, and the session namespace is rebuilt because the interrupted
code may have left it half-mutated. The result of such an execution
carries ``namespace_preserved=False``.
"""

from __future__ import annotations

import ast
import ctypes
import io
import sys
import threading
import time
import traceback
from dataclasses import dataclass
from enum import Enum
from typing import Callable

DEFAULT_TIMEOUT_MS = 120_000
OUTPUT_CAP = 1024 * 1024  # per stream, per execution
_CANCEL_GRACE_S = 0.05


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
    namespace_preserved: bool = True


class SandboxError(RuntimeError):
    pass


class UnknownSession(SandboxError):
    pass


class DuplicateSession(SandboxError):
    pass


class _Cancelled(BaseException):
    """Injected into an execution thread that ran past its deadline."""


class _CappedBuffer:
    """Write sink that stops keeping bytes past the cap."""

    def __init__(self, cap: int) -> None:
        self._cap = cap
        self._parts: list[str] = []
        self._size = 0
        self.truncated = False

    def write(self, s: str) -> int:
        room = self._cap - self._size
        if room <= 0:
            self.truncated = True
            return len(s)
        if len(s) > room:
            self._parts.append(s[:room])
            self._size = self._cap
            self.truncated = True
        else:
            self._parts.append(s)
            self._size += len(s)
        return len(s)

    def value(self) -> str:
        text = "".join(self._parts)
        if self.truncated:
            text += f"\n[output truncated at {self._cap} bytes]"
        return text


class _StreamRouter(io.TextIOBase):
    """Replaces a process-wide stream; writes go to the sink registered
    by the current thread, or through to the original stream."""

    def __init__(self, fallback) -> None:
        self._fallback = fallback
        self._local = threading.local()

    def register(self, sink: _CappedBuffer) -> None:
        self._local.sink = sink

    def unregister(self) -> None:
        self._local.sink = None

    def retarget(self, fallback) -> None:
        self._fallback = fallback

    def writable(self) -> bool:
        return True

    def write(self, s: str) -> int:
        sink = getattr(self._local, "sink", None)
        if sink is None:
            return self._fallback.write(s)
        return sink.write(s)

    def flush(self) -> None:
        if getattr(self._local, "sink", None) is None:
            self._fallback.flush()


_router_lock = threading.Lock()
_routers: dict[str, _StreamRouter] = {}


def _install_routers() -> tuple[_StreamRouter, _StreamRouter]:
    with _router_lock:
        if not _routers:
            _routers["out"] = _StreamRouter(sys.stdout)
            _routers["err"] = _StreamRouter(sys.stderr)
        out, err = _routers["out"], _routers["err"]
        # Anything that swapped the process streams since the last
        # execution (test harnesses do) silently dethrones the router;
        # adopt the current stream as fallback and reinstall.
        if sys.stdout is not out:
            out.retarget(sys.stdout)
            sys.stdout = out
        if sys.stderr is not err:
            err.retarget(sys.stderr)
            sys.stderr = err
        return out, err


def _async_raise(thread_id: int, exc_type: type) -> None:
    ctypes.pythonapi.PyThreadState_SetAsyncExc(
        ctypes.c_ulong(thread_id), ctypes.py_object(exc_type)
    )


class Session:
    """One persistent namespace; executions are serialized per session."""

    def __init__(
        self,
        session_id: str,
        *,
        bindings: dict | None = None,
        output_cap: int = OUTPUT_CAP,
    ) -> None:
        if not session_id:
            raise ValueError("session_id must be non-empty")
        self.session_id = session_id
        self._bindings = dict(bindings or {})
        self._cap = output_cap
        self._lock = threading.Lock()
        self.namespace: dict = {}
        self._reset_namespace()

    def _reset_namespace(self) -> None:
        self.namespace = {"__name__": "__main__", "__builtins__": __builtins__}
        self.namespace.update(self._bindings)

    def _run(self, code: str, out: _CappedBuffer, err: _CappedBuffer, slot: list) -> None:
        router_out, router_err = _install_routers()
        router_out.register(out)
        router_err.register(err)
        try:
            tree = ast.parse(code, "<session>", "exec")
            echo = None
            if tree.body and isinstance(tree.body[-1], ast.Expr):
                echo = ast.Expression(tree.body.pop().value)
            if tree.body:
                exec(compile(tree, "<session>", "exec"), self.namespace)
            if echo is not None:
                value = eval(compile(echo, "<session>", "eval"), self.namespace)
                if value is not None:
                    print(repr(value))
            slot.append(ExecStatus.SUCCESS)
        except _Cancelled:
            pass  # deadline passed; the main thread already answered
        except BaseException:
            err.write(traceback.format_exc())
            slot.append(ExecStatus.EXCEPTION_RAISED)
        finally:
            router_out.unregister()
            router_err.unregister()

    def execute(self, code: str, timeout_ms: int | None = None) -> ExecutionResult:
        timeout_ms = DEFAULT_TIMEOUT_MS if timeout_ms is None else timeout_ms
        if timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")
        with self._lock:
            out = _CappedBuffer(self._cap)
            err = _CappedBuffer(self._cap)
            slot: list = []
            started = time.monotonic()
            worker = threading.Thread(
                target=self._run, args=(code, out, err, slot), daemon=True
            )
            worker.start()
            worker.join(timeout_ms / 1000.0)
            elapsed = int((time.monotonic() - started) * 1000)
            if worker.is_alive():
                _async_raise(worker.ident, _Cancelled)
                worker.join(_CANCEL_GRACE_S)
                self._reset_namespace()
                return ExecutionResult(
                    self.session_id,
                    ExecStatus.TIMEOUT,
                    out.value(),
                    err.value(),
                    max(elapsed, timeout_ms),
                    namespace_preserved=False,
                )
            status = slot[0] if slot else ExecStatus.KILLED
            return ExecutionResult(
                self.session_id, status, out.value(), err.value(), elapsed
            )

    def close(self) -> None:
        self.namespace = {}


class SessionManager:
    """Opens, routes to, and closes sessions by id."""

    def __init__(
        self,
        *,
        session_factory: Callable[[str], Session] | None = None,
        bindings_factory: Callable[[], dict] | None = None,
        output_cap: int = OUTPUT_CAP,
    ) -> None:
        if session_factory is None:
            if bindings_factory is None:
                from .toolbindings import make_bindings

                bindings_factory = make_bindings
            session_factory = lambda sid: Session(  # noqa: E731
                sid, bindings=bindings_factory(), output_cap=output_cap
            )
        self._factory = session_factory
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def open(self, session_id: str) -> None:
        with self._lock:
            if session_id in self._sessions:
                raise DuplicateSession(session_id)
            self._sessions[session_id] = self._factory(session_id)

    def _get(self, session_id: str) -> Session:
        with self._lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise UnknownSession(session_id)
        return session

    def execute(
        self, session_id: str, code: str, timeout_ms: int | None = None
    ) -> ExecutionResult:
        return self._get(session_id).execute(code, timeout_ms)

    def close(self, session_id: str) -> None:
        with self._lock:
            session = self._sessions.pop(session_id, None)
        if session is None:
            raise UnknownSession(session_id)
        session.close()

    def close_all(self) -> None:
        with self._lock:
            sessions = list(self._sessions.values())
            self._sessions.clear()
        for session in sessions:
            session.close()

    def __len__(self) -> int:
        with self._lock:
            return len(self._sessions)
