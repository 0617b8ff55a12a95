"""Search tool tests: URL normalization, validation, provider adapters."""

from __future__ import annotations

import json

import pytest

from codeloop.tools.errors import BadRequest, EmptyQuery, ProviderDown, ProviderQuota
from codeloop.tools.search import (
    EntityFacts,
    Preview,
    SearchResponse,
    SerpHttpProvider,
    StaticSearchProvider,
    is_absolute_http,
    normalize_url,
    search,
)


class TestNormalizeUrl:
    def test_strips_tracking_params(self):
        url = (
            "https://ex.com/page?utm_source=news&utm_medium=email"
            "&id=42&gclid=abc&fbclid=xyz"
        )
        assert normalize_url(url) == "https://ex.com/page?id=42"

    def test_drops_fragment(self):
        assert normalize_url("https://ex.com/a#section-2") == "https://ex.com/a"

    def test_keeps_meaningful_params_in_order(self):
        url = "https://ex.com/s?q=ion+thruster&page=2&lang=en"
        assert normalize_url(url) == url

    def test_plain_url_unchanged(self):
        assert normalize_url("http://ex.com/path/x.html") == "http://ex.com/path/x.html"

    def test_case_insensitive_tracking_names(self):
        assert normalize_url("https://ex.com/?UTM_Source=x&a=1") == "https://ex.com/?a=1"


def test_is_absolute_http():
    assert is_absolute_http("https://ex.com/a")
    assert is_absolute_http("http://ex.com")
    assert not is_absolute_http("/relative/path")
    assert not is_absolute_http("ftp://ex.com/a")
    assert not is_absolute_http("not a url")


def canned() -> SearchResponse:
    return SearchResponse(
        previews=[
            Preview("Repo", "https://codehost.example/org/repo?utm_source=serp", "The repository."),
            Preview("Docs", "https://docs.example/start", "Getting started."),
            Preview("Broken", "not-a-url", "Should be dropped."),
        ],
        entity_facts=EntityFacts(
            name="Example Org",
            description="A software organization.",
            attributes=[("Founded", "2011"), ("Type", "Open source")],
        ),
        related_queries=["example org repo", "example docs"],
    )


class TestSearchValidation:
    def test_empty_query(self):
        with pytest.raises(EmptyQuery):
            search(StaticSearchProvider(), "", 5)

    def test_whitespace_query(self):
        with pytest.raises(EmptyQuery):
            search(StaticSearchProvider(), "   ", 5)

    def test_top_k_bounds(self):
        provider = StaticSearchProvider({"q": canned()})
        with pytest.raises(BadRequest):
            search(provider, "q", 0)
        with pytest.raises(BadRequest):
            search(provider, "q", 21)
        assert search(provider, "q", 20) is not None

    def test_preview_urls_normalized_and_invalid_dropped(self):
        got = search(StaticSearchProvider({"q": canned()}), "q", 10)
        assert [p.url for p in got.previews] == [
            "https://codehost.example/org/repo",
            "https://docs.example/start",
        ]

    def test_top_k_truncates(self):
        got = search(StaticSearchProvider({"q": canned()}), "q", 1)
        assert len(got.previews) == 1

    def test_entity_facts_and_related_pass_through(self):
        got = search(StaticSearchProvider({"q": canned()}), "q", 5)
        assert got.entity_facts.name == "Example Org"
        assert got.entity_facts.attributes[0] == ("Founded", "2011")
        assert got.related_queries == ["example org repo", "example docs"]

    def test_unknown_query_empty_response(self):
        got = search(StaticSearchProvider({"q": canned()}), "other", 5)
        assert got.previews == [] and got.entity_facts is None


class TestRoundTrip:
    def test_search_response_dict_round_trip(self):
        resp = canned()
        again = SearchResponse.from_dict(json.loads(json.dumps(resp.to_dict())))
        assert again == resp

    def test_no_facts_round_trip(self):
        resp = SearchResponse(previews=[Preview("t", "https://e.com", "s")])
        again = SearchResponse.from_dict(resp.to_dict())
        assert again == resp and again.entity_facts is None


SERP_BODY = {
    "knowledgeGraph": {
        "title": "Widget Corp",
        "description": "Maker of widgets.",
        "attributes": {"CEO": "A. Person", "Founded": "1999"},
    },
    "organic": [
        {"title": "Widget Corp - Home", "link": "https://widget.example/", "snippet": "Official site."},
        {"title": "Widget Corp - Wiki", "link": "https://wiki.example/widget", "snippet": "Encyclopedia entry."},
    ],
    "relatedSearches": [{"query": "widget corp careers"}, {"query": "widget corp stock"}],
}


class TestSerpHttpProvider:
    def test_maps_all_three_channels(self, monkeypatch):
        monkeypatch.setenv("SEARCH_API_KEY", "k-123")
        seen = {}

        def transport(url, headers, payload):
            seen.update(url=url, headers=headers, payload=payload)
            return 200, json.dumps(SERP_BODY).encode()

        provider = SerpHttpProvider(transport=transport, sleep=lambda s: None)
        got = search(provider, "widget corp", 5)
        assert seen["headers"]["X-API-KEY"] == "k-123"
        assert seen["payload"] == {"q": "widget corp", "num": 5}
        assert got.entity_facts.name == "Widget Corp"
        assert ("CEO", "A. Person") in got.entity_facts.attributes
        assert [p.url for p in got.previews] == [
            "https://widget.example/",
            "https://wiki.example/widget",
        ]
        assert got.related_queries == ["widget corp careers", "widget corp stock"]

    def test_quota_exhausted(self):
        provider = SerpHttpProvider(
            transport=lambda *a: (429, b""), sleep=lambda s: None
        )
        with pytest.raises(ProviderQuota):
            provider.raw_search("q", 5)

    def test_server_errors_retried_then_provider_down(self):
        calls = []
        sleeps = []

        def transport(url, headers, payload):
            calls.append(1)
            return 503, b""

        provider = SerpHttpProvider(transport=transport, sleep=sleeps.append)
        with pytest.raises(ProviderDown):
            provider.raw_search("q", 5)
        assert len(calls) == 3
        assert sleeps == [0.5, 1.0]

    def test_connection_error_then_success(self):
        calls = []

        def transport(url, headers, payload):
            calls.append(1)
            if len(calls) == 1:
                raise ConnectionError("reset")
            return 200, json.dumps({"organic": []}).encode()

        provider = SerpHttpProvider(transport=transport, sleep=lambda s: None)
        got = provider.raw_search("q", 5)
        assert got.previews == [] and len(calls) == 2

    def test_unparseable_body(self):
        provider = SerpHttpProvider(
            transport=lambda *a: (200, b"<html>oops</html>"), sleep=lambda s: None
        )
        with pytest.raises(ProviderDown):
            provider.raw_search("q", 5)

    def test_client_error_is_terminal(self):
        calls = []

        def transport(url, headers, payload):
            calls.append(1)
            return 403, b""

        provider = SerpHttpProvider(transport=transport, sleep=lambda s: None)
        with pytest.raises(ProviderDown):
            provider.raw_search("q", 5)
        assert len(calls) == 1
