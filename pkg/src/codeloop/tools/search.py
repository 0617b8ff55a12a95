"""Web search: response shapes, URL normalization, provider adapters.

A provider adapter maps one upstream search API onto the three channels
the agent consumes: structured entity facts, webpage previews, and
related queries. The ``search`` entry point validates inputs and
normalizes preview URLs so downstream callers never see tracking
parameters or fragments.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol
from urllib.parse import parse_qsl, urlencode, urlsplit, urlunsplit

from .errors import BadRequest, EmptyQuery, ProviderDown, ProviderQuota

MAX_TOP_K = 20

# Query parameters that only identify the click, never the resource.
_TRACKING_EXACT = {
    "gclid",
    "gclsrc",
    "dclid",
    "fbclid",
    "msclkid",
    "mc_cid",
    "mc_eid",
    "igshid",
    "yclid",
    "twclid",
    "wbraid",
    "gbraid",
    "ref_src",
    "ref_url",
    "spm",
    "_hsenc",
    "_hsmi",
}
_TRACKING_PREFIXES = ("utm_", "pk_", "mtm_", "oly_")


def normalize_url(url: str) -> str:
    """Drop tracking query parameters and the fragment, keep the rest."""
    parts = urlsplit(url)
    kept = [
        (k, v)
        for k, v in parse_qsl(parts.query, keep_blank_values=True)
        if k.lower() not in _TRACKING_EXACT
        and not k.lower().startswith(_TRACKING_PREFIXES)
    ]
    return urlunsplit(
        (parts.scheme, parts.netloc, parts.path, urlencode(kept), "")
    )


def is_absolute_http(url: str) -> bool:
    parts = urlsplit(url)
    return parts.scheme in ("http", "https") and bool(parts.netloc)


@dataclass
class Preview:
    title: str
    url: str
    snippet: str

    def to_dict(self) -> dict:
        return {"title": self.title, "url": self.url, "snippet": self.snippet}

    @classmethod
    def from_dict(cls, d: dict) -> "Preview":
        return cls(
            title=d.get("title", ""),
            url=d.get("url", ""),
            snippet=d.get("snippet", ""),
        )


@dataclass
class EntityFacts:
    name: str
    description: str = ""
    # Ordered key-value pairs; a dict would lose duplicate keys some
    # knowledge panels legitimately contain.
    attributes: list[tuple[str, str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "attributes": [[k, v] for k, v in self.attributes],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EntityFacts":
        return cls(
            name=d.get("name", ""),
            description=d.get("description", ""),
            attributes=[(str(k), str(v)) for k, v in d.get("attributes", [])],
        )


@dataclass
class SearchResponse:
    previews: list[Preview] = field(default_factory=list)
    entity_facts: EntityFacts | None = None
    related_queries: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "entity_facts": (
                self.entity_facts.to_dict() if self.entity_facts else None
            ),
            "previews": [p.to_dict() for p in self.previews],
            "related_queries": list(self.related_queries),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SearchResponse":
        facts = d.get("entity_facts")
        return cls(
            previews=[Preview.from_dict(p) for p in d.get("previews", [])],
            entity_facts=EntityFacts.from_dict(facts) if facts else None,
            related_queries=[str(q) for q in d.get("related_queries", [])],
        )


class SearchProvider(Protocol):
    def raw_search(self, query: str, top_k: int) -> SearchResponse: ...


class StaticSearchProvider:
    """Canned responses keyed by query; used by fixtures and demos."""

    def __init__(
        self,
        responses: dict[str, SearchResponse | dict] | None = None,
        default: SearchResponse | None = None,
    ) -> None:
        self._responses: dict[str, SearchResponse] = {}
        for query, resp in (responses or {}).items():
            if isinstance(resp, dict):
                resp = SearchResponse.from_dict(resp)
            self._responses[query] = resp
        self._default = default

    def raw_search(self, query: str, top_k: int) -> SearchResponse:
        resp = self._responses.get(query, self._default)
        if resp is None:
            return SearchResponse()
        return SearchResponse(
            previews=list(resp.previews)[:top_k],
            entity_facts=resp.entity_facts,
            related_queries=list(resp.related_queries),
        )


# transport(url, headers, payload) -> (status_code, body_bytes)
Transport = Callable[[str, dict, dict], tuple[int, bytes]]


def _requests_transport(url: str, headers: dict, payload: dict) -> tuple[int, bytes]:
    import requests

    try:
        r = requests.post(url, headers=headers, json=payload, timeout=30)
    except requests.RequestException as exc:
        raise ConnectionError(str(exc)) from exc
    return r.status_code, r.content


class SerpHttpProvider:
    """Adapter for a commercial SERP API exposing knowledge-graph,
    organic-results, and related-searches channels."""

    def __init__(
        self,
        endpoint: str = "https://google.serper.dev/search",
        *,
        api_key_env: str = "SEARCH_API_KEY",
        transport: Transport | None = None,
        retries: int = 3,
        backoff_base: float = 0.5,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.endpoint = endpoint
        self.api_key_env = api_key_env
        self._transport = transport or _requests_transport
        self._retries = max(1, retries)
        self._backoff_base = backoff_base
        self._sleep = sleep

    def raw_search(self, query: str, top_k: int) -> SearchResponse:
        key = os.environ.get(self.api_key_env, "")
        headers = {"X-API-KEY": key, "Content-Type": "application/json"}
        payload = {"q": query, "num": top_k}
        last_error = "no attempt made"
        for attempt in range(self._retries):
            if attempt:
                self._sleep(self._backoff_base * (2 ** (attempt - 1)))
            try:
                status, body = self._transport(self.endpoint, headers, payload)
            except ConnectionError as exc:
                last_error = str(exc)
                continue
            if status == 429:
                raise ProviderQuota("search provider quota exhausted")
            if status >= 500:
                last_error = f"upstream status {status}"
                continue
            if status != 200:
                raise ProviderDown(f"search provider returned status {status}")
            try:
                doc = json.loads(body.decode("utf-8"))
            except (ValueError, UnicodeDecodeError) as exc:
                raise ProviderDown(f"unparseable provider body: {exc}") from exc
            return self._map_response(doc)
        raise ProviderDown(f"search provider unreachable: {last_error}")

    @staticmethod
    def _map_response(doc: dict) -> SearchResponse:
        previews = [
            Preview(
                title=str(item.get("title", "")),
                url=str(item.get("link", item.get("url", ""))),
                snippet=str(item.get("snippet", "")),
            )
            for item in doc.get("organic", [])
        ]
        facts = None
        kg = doc.get("knowledgeGraph")
        if isinstance(kg, dict) and kg.get("title"):
            attrs = kg.get("attributes", {})
            if isinstance(attrs, dict):
                pairs = [(str(k), str(v)) for k, v in attrs.items()]
            else:
                pairs = [(str(k), str(v)) for k, v in attrs]
            facts = EntityFacts(
                name=str(kg.get("title", "")),
                description=str(kg.get("description", "")),
                attributes=pairs,
            )
        related = [
            str(item.get("query", item)) if isinstance(item, dict) else str(item)
            for item in doc.get("relatedSearches", [])
        ]
        return SearchResponse(
            previews=previews, entity_facts=facts, related_queries=related
        )


def search(provider: SearchProvider, query: str, top_k: int = 10) -> SearchResponse:
    """Validated search with URL normalization of the previews."""
    if not query or not query.strip():
        raise EmptyQuery("search query must be non-empty")
    if not isinstance(top_k, int) or top_k < 1:
        raise BadRequest("top_k must be a positive integer")
    if top_k > MAX_TOP_K:
        raise BadRequest(f"top_k must be at most {MAX_TOP_K}")
    raw = provider.raw_search(query.strip(), top_k)
    previews = []
    for p in raw.previews[:top_k]:
        if not is_absolute_http(p.url):
            continue
        previews.append(
            Preview(title=p.title, url=normalize_url(p.url), snippet=p.snippet)
        )
    return SearchResponse(
        previews=previews,
        entity_facts=raw.entity_facts,
        related_queries=list(raw.related_queries),
    )
