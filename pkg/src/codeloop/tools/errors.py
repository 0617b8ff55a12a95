"""Error taxonomy shared by the search and parse tools."""

from __future__ import annotations


class ToolError(RuntimeError):
    code = "tool_error"
    http_status = 500


class BadRequest(ToolError):
    code = "bad_request"
    http_status = 400


class EmptyQuery(BadRequest):
    code = "empty_query"


class ProviderQuota(ToolError):
    code = "provider_quota"
    http_status = 429
    retry_advised = True


class ProviderDown(ToolError):
    code = "provider_down"
    http_status = 502


class FetchFailed(ToolError):
    code = "fetch_failed"
    http_status = 502

    def __init__(self, message: str, attempts: list | None = None) -> None:
        super().__init__(message)
        self.attempts = attempts or []


class RobotsDisallowed(ToolError):
    code = "robots_disallowed"
    http_status = 403


class ContentEmpty(ToolError):
    code = "content_empty"
    http_status = 422


class FixtureMiss(ToolError):
    code = "fixture_miss"
    http_status = 424
