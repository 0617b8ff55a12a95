"""Execution host for agent-emitted code: persistent sessions, web tool
bindings, and a line-delimited JSON protocol over stdio."""

from .sessions import (
    DEFAULT_TIMEOUT_MS,
    OUTPUT_CAP,
    DuplicateSession,
    ExecStatus,
    ExecutionResult,
    Session,
    SessionManager,
    UnknownSession,
)

__all__ = [
    "DEFAULT_TIMEOUT_MS",
    "OUTPUT_CAP",
    "DuplicateSession",
    "ExecStatus",
    "ExecutionResult",
    "Session",
    "SessionManager",
    "UnknownSession",
]
