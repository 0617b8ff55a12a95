"""Web tool bindings injected into every session namespace.

``web_search`` and ``web_parse`` proxy to the tool service named by
TOOL_SERVICE_URL and hand back the parsed JSON structures unchanged, so
results inside the sandbox are exactly what the service returned. Tool
failures surface as ToolCallError carrying the service's error code,
which user code can catch and read."""

from __future__ import annotations

import os


class ToolCallError(RuntimeError):
    def __init__(self, code: str, message: str) -> None:
        super().__init__(f"{code}: {message}")
        self.code = code


def _base_url(override: str | None) -> str:
    url = override or os.environ.get("TOOL_SERVICE_URL")
    if not url:
        raise ToolCallError(
            "no_tool_service",
            "TOOL_SERVICE_URL is not set; web tools are unavailable",
        )
    return url.rstrip("/")


def _post(base: str, path: str, payload: dict) -> dict:
    import requests

    try:
        resp = requests.post(base + path, json=payload, timeout=120)
    except requests.RequestException as exc:
        raise ToolCallError("tool_service_unreachable", str(exc)) from exc
    try:
        doc = resp.json()
    except ValueError as exc:
        raise ToolCallError(
            "bad_tool_response", f"non-JSON body (HTTP {resp.status_code})"
        ) from exc
    if resp.status_code != 200:
        error = doc.get("error", {}) if isinstance(doc, dict) else {}
        raise ToolCallError(
            error.get("code", "tool_error"),
            error.get("message", f"HTTP {resp.status_code}"),
        )
    return doc


def make_bindings(base_url: str | None = None) -> dict:
    """The callables preloaded into a fresh session namespace."""

    def web_search(query: str, top_k: int = 10) -> dict:
        """Search the web; returns previews, entity facts, and related
        queries as plain dicts and lists."""
        return _post(_base_url(base_url), "/v1/search", {"query": query, "top_k": top_k})

    def web_parse(url: str, query: str, mode: str = "auto") -> dict:
        """Fetch a page and return its query-relevant passages plus
        outbound links and fetch diagnostics."""
        return _post(
            _base_url(base_url), "/v1/parse", {"url": url, "query": query, "mode": mode}
        )

    return {"web_search": web_search, "web_parse": web_parse}
