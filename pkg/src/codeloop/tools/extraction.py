"""Content extraction and query-relevance scoring for fetched pages.

The relevance pipeline is deliberately plain: fixed-size overlapping
windows scored by IDF-weighted query-term hits, normalized per window
length; deterministic and needs no model. A model-assisted variant
exists but degrades to the lexical path on any provider failure.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from html.parser import HTMLParser
from urllib.parse import urljoin, urlsplit

from ..gateway import Gateway, GenParams, Message, ProviderError

WINDOW_CHARS = 1000
WINDOW_OVERLAP = 200
TOP_PASSAGES = 8

_WORD = re.compile(r"\w+")


@dataclass
class Passage:
    text: str
    relevance_score: float

    def to_dict(self) -> dict:
        return {"text": self.text, "relevance_score": self.relevance_score}


def split_windows(content: str) -> list[str]:
    """Fixed windows of WINDOW_CHARS with WINDOW_OVERLAP carry-over."""
    if not content:
        return []
    stride = WINDOW_CHARS - WINDOW_OVERLAP
    out = []
    for start in range(0, len(content), stride):
        out.append(content[start : start + WINDOW_CHARS])
        if start + WINDOW_CHARS >= len(content):
            break
    return out


def _tokens(text: str) -> list[str]:
    return [t.lower() for t in _WORD.findall(text)]


def score_windows(content: str, query: str) -> list[tuple[str, float]]:
    """Score every window; returns (window, normalized score) pairs in
    document order. Scores are raw sums of idf * hits / window token
    count, then scaled so the best window scores 1.0 (all-zero stays
    all-zero)."""
    wins = split_windows(content)
    if not wins:
        return []
    terms = sorted(set(_tokens(query)))
    win_tokens = [_tokens(w) for w in wins]
    n = len(wins)
    idf = {}
    for t in terms:
        df = sum(1 for toks in win_tokens if t in toks)
        idf[t] = math.log(1.0 + n / (1.0 + df))
    raw = []
    for toks in win_tokens:
        counts = Counter(toks)
        s = sum(idf[t] * counts[t] for t in terms)
        raw.append(s / len(toks) if toks else 0.0)
    top = max(raw)
    if top > 0:
        raw = [r / top for r in raw]
    return list(zip(wins, raw))


def extract_relevant(
    content: str,
    query: str,
    method: str = "lexical",
    *,
    gateway: Gateway | None = None,
    top_k: int = TOP_PASSAGES,
) -> list[Passage]:
    """Top windows most relevant to the query, sorted by descending
    score with document order breaking ties. ``method`` is "lexical"
    or "model_assisted"; the latter asks the gateway for a focused
    digest and falls back to lexical when the call fails."""
    if not content:
        return []
    if method == "model_assisted" and gateway is not None:
        try:
            return _model_assisted(content, query, gateway, top_k)
        except ProviderError:
            pass
    scored = score_windows(content, query)
    order = sorted(
        range(len(scored)), key=lambda i: (-scored[i][1], i)
    )[:top_k]
    return [Passage(scored[i][0], round(scored[i][1], 6)) for i in order]


def _model_assisted(
    content: str, query: str, gateway: Gateway, top_k: int
) -> list[Passage]:
    prompt = (
        "Extract up to {k} passages from the document that answer or "
        "bear on the query. Reply with one passage per line.\n\n"
        "Query: {q}\n\nDocument:\n{d}"
    ).format(k=top_k, q=query, d=content[:20000])
    out = gateway.generate_stream(
        [Message("user", prompt)], GenParams(max_new_tokens=2048)
    )
    lines = [ln.strip() for ln in out.text.splitlines() if ln.strip()]
    if not lines:
        raise ProviderError("model-assisted extraction returned nothing")
    step = 1.0 / len(lines)
    return [
        Passage(ln, round(1.0 - i * step, 6)) for i, ln in enumerate(lines[:top_k])
    ]


# -- HTML handling -------------------------------------------------------

_SKIP_TAGS = {
    "script",
    "style",
    "noscript",
    "template",
    "svg",
    "nav",
    "header",
    "footer",
    "aside",
    "form",
    "iframe",
}
_BLOCK_TAGS = {
    "p",
    "div",
    "article",
    "section",
    "main",
    "li",
    "td",
    "th",
    "pre",
    "blockquote",
    "h1",
    "h2",
    "h3",
    "h4",
    "h5",
    "h6",
    "figcaption",
    "br",
    "tr",
    "ul",
    "ol",
    "table",
}


class _PageWalker(HTMLParser):
    """One pass over the document: title, block texts, anchors with the
    block they sit in (for subpage descriptions)."""

    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.title_parts: list[str] = []
        self.blocks: list[list[str]] = [[]]
        self.anchors: list[tuple[str, list[str], int]] = []
        self._skip_depth = 0
        self._in_title = False
        self._anchor: tuple[str, list[str]] | None = None

    def handle_starttag(self, tag, attrs):
        if tag in _SKIP_TAGS:
            self._skip_depth += 1
            return
        if self._skip_depth:
            return
        if tag == "title":
            self._in_title = True
        elif tag in _BLOCK_TAGS:
            self._flush_anchor()
            if self.blocks[-1]:
                self.blocks.append([])
        elif tag == "a":
            href = dict(attrs).get("href")
            if href:
                self._anchor = (href, [])

    def handle_endtag(self, tag):
        if tag in _SKIP_TAGS:
            self._skip_depth = max(0, self._skip_depth - 1)
            return
        if self._skip_depth:
            return
        if tag == "title":
            self._in_title = False
        elif tag == "a":
            self._flush_anchor()
        elif tag in _BLOCK_TAGS and self.blocks[-1]:
            self.blocks.append([])

    def _flush_anchor(self):
        if self._anchor is not None:
            href, parts = self._anchor
            self.anchors.append((href, parts, len(self.blocks) - 1))
            self._anchor = None

    def handle_data(self, data):
        if self._skip_depth:
            return
        if self._in_title:
            self.title_parts.append(data)
            return
        if self._anchor is not None:
            self._anchor[1].append(data)
        self.blocks[-1].append(data)

    def close(self):
        self._flush_anchor()
        super().close()


def _clean(s: str) -> str:
    return re.sub(r"\s+", " ", s).strip()


@dataclass
class PageContent:
    title: str
    text: str
    used_fallback: bool


def extract_main_text(html: str, *, min_chars: int = 200) -> PageContent:
    """Primary content extraction; when the structured pass yields less
    than ``min_chars``, fall back to the densest raw-text block (all
    tags stripped, largest blank-line-separated run wins)."""
    walker = _PageWalker()
    try:
        walker.feed(html)
        walker.close()
    except Exception:
        pass  # damaged markup: whatever was collected still counts
    title = _clean("".join(walker.title_parts))
    block_texts = [_clean(" ".join(b)) for b in walker.blocks]
    text = "\n\n".join(b for b in block_texts if b)
    if len(text) >= min_chars:
        return PageContent(title, text, used_fallback=False)
    stripped = re.sub(r"(?is)<(script|style)[^>]*>.*?</\1>", " ", html)
    stripped = re.sub(r"<[^>]+>", "\n", stripped)
    blocks = [
        _clean(b) for b in re.split(r"\n\s*\n", stripped) if _clean(b)
    ]
    densest = max(blocks, key=len, default="")
    best = densest if len(densest) > len(text) else text
    return PageContent(title, best, used_fallback=True)


@dataclass
class Subpage:
    url: str
    brief_description: str

    def to_dict(self) -> dict:
        return {"url": self.url, "brief_description": self.brief_description}


def harvest_links(
    html: str, base_url: str, *, limit: int = 40, context_chars: int = 140
) -> list[Subpage]:
    """Outbound links with one-line descriptions built from the anchor
    text plus a bounded slice of its surrounding block."""
    walker = _PageWalker()
    try:
        walker.feed(html)
        walker.close()
    except Exception:
        pass
    block_texts = [_clean(" ".join(b)) for b in walker.blocks]
    seen = set()
    out: list[Subpage] = []
    for href, parts, block_idx in walker.anchors:
        url = urljoin(base_url, href.strip())
        split = urlsplit(url)
        if split.scheme not in ("http", "https") or not split.netloc:
            continue
        url = url.split("#", 1)[0]
        if not url or url in seen or url == base_url:
            continue
        seen.add(url)
        anchor_text = _clean(" ".join(parts))
        context = block_texts[block_idx] if block_idx < len(block_texts) else ""
        if context == anchor_text:
            context = ""
        desc = anchor_text or "(no anchor text)"
        if context:
            desc = f"{desc} - {context[:context_chars]}"
        out.append(Subpage(url, desc))
        if len(out) >= limit:
            break
    return out
