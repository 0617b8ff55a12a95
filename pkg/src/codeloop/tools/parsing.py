"""Web parse: URL classification, fetching, and the two page
strategies.

General pages go through structured content extraction with a
densest-block fallback, then relevance scoring and subpage harvesting.
Scientific papers try an HTML rendering of the publication first and
revert to downloading the PDF only when the HTML route fails or comes
back incomplete; the diagnostics trail always shows the HTML attempt
before any PDF attempt.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass, field
from typing import Callable
from urllib import robotparser
from urllib.parse import urlsplit

from ._pdftext import pdf_extract_text
from .errors import (
    BadRequest,
    ContentEmpty,
    EmptyQuery,
    FetchFailed,
    RobotsDisallowed,
)
from .extraction import (
    Passage,
    Subpage,
    extract_main_text,
    extract_relevant,
    harvest_links,
)

STRATEGY_GENERAL = "general_page"
STRATEGY_PAPER_HTML = "paper_html"
STRATEGY_PAPER_PDF = "paper_pdf"

MODES = ("auto", "general", "paper")

_DOI_PATH = re.compile(r"/10\.\d{4,}/")

DEFAULT_PAPER_HOSTS = (
    "arxiv.org",
    "ar5iv.org",
    "ar5iv.labs.arxiv.org",
    "biorxiv.org",
    "medrxiv.org",
    "chemrxiv.org",
    "openreview.net",
    "aclanthology.org",
    "doi.org",
)

DEFAULT_HTML_REWRITES: tuple[tuple[str, str], ...] = (
    (
        r"^https?://(?:www\.)?arxiv\.org/(?:abs|pdf)/([0-9]{4}\.[0-9]{4,5}"
        r"(?:v\d+)?)(?:\.pdf)?/?$",
        r"https://ar5iv.labs.arxiv.org/html/\1",
    ),
    (
        r"^(https?://(?:www\.)?(?:bio|med)rxiv\.org/content/.+?)"
        r"(?:\.full)?(?:\.pdf)?$",
        r"\1.full",
    ),
)

DEFAULT_PDF_REWRITES: tuple[tuple[str, str], ...] = (
    (
        r"^https?://(?:www\.)?arxiv\.org/abs/([0-9]{4}\.[0-9]{4,5}(?:v\d+)?)/?$",
        r"https://arxiv.org/pdf/\1.pdf",
    ),
    (
        r"^(https?://(?:www\.)?(?:bio|med)rxiv\.org/content/.+?)(?:\.full)?$",
        r"\1.full.pdf",
    ),
)


@dataclass
class ParseConfig:
    paper_hosts: tuple[str, ...] = DEFAULT_PAPER_HOSTS
    paper_html_rewrites: tuple[tuple[str, str], ...] = DEFAULT_HTML_REWRITES
    paper_pdf_rewrites: tuple[tuple[str, str], ...] = DEFAULT_PDF_REWRITES
    completeness_words: int = 500
    max_subpages: int = 40
    top_passages: int = 8
    relevance_method: str = "lexical"


@dataclass
class ParseResponse:
    source_url: str
    strategy: str
    relevant_passages: list[Passage] = field(default_factory=list)
    subpages: list[Subpage] = field(default_factory=list)
    fetch_diagnostics: dict = field(default_factory=lambda: {"attempts": []})

    def to_dict(self) -> dict:
        return {
            "source_url": self.source_url,
            "strategy": self.strategy,
            "relevant_passages": [p.to_dict() for p in self.relevant_passages],
            "subpages": [s.to_dict() for s in self.subpages],
            "fetch_diagnostics": {
                "attempts": [
                    [method, outcome]
                    for method, outcome in self.fetch_diagnostics.get(
                        "attempts", []
                    )
                ]
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParseResponse":
        return cls(
            source_url=d.get("source_url", ""),
            strategy=d.get("strategy", STRATEGY_GENERAL),
            relevant_passages=[
                Passage(p.get("text", ""), float(p.get("relevance_score", 0.0)))
                for p in d.get("relevant_passages", [])
            ],
            subpages=[
                Subpage(s.get("url", ""), s.get("brief_description", ""))
                for s in d.get("subpages", [])
            ],
            fetch_diagnostics={
                "attempts": [
                    (a[0], a[1])
                    for a in d.get("fetch_diagnostics", {}).get("attempts", [])
                ]
            },
        )


def classify(url: str, config: ParseConfig | None = None) -> str:
    """Route a URL to "paper" or "general" without fetching it."""
    config = config or ParseConfig()
    parts = urlsplit(url)
    host = parts.netloc.lower().rsplit(":", 1)[0]
    path = parts.path.lower()
    if any(host == h or host.endswith("." + h) for h in config.paper_hosts):
        return "paper"
    if _DOI_PATH.search(parts.path):
        return "paper"
    if path.endswith(".pdf"):
        return "paper"
    return "general"


@dataclass
class FetchedDoc:
    url: str
    status: int
    content_type: str
    body: bytes

    @property
    def ok(self) -> bool:
        return 200 <= self.status < 300

    def text(self) -> str:
        m = re.search(r'charset="?([\w.-]+)', self.content_type)
        encoding = m.group(1) if m else "utf-8"
        try:
            return self.body.decode(encoding, errors="replace")
        except LookupError:
            return self.body.decode("utf-8", errors="replace")


# http_get(url) -> (status, headers, body)
HttpGet = Callable[[str], tuple[int, dict, bytes]]


def _requests_get(url: str) -> tuple[int, dict, bytes]:
    import requests

    try:
        r = requests.get(
            url,
            timeout=30,
            headers={"User-Agent": Fetcher.USER_AGENT},
            allow_redirects=True,
        )
    except requests.RequestException as exc:
        raise ConnectionError(str(exc)) from exc
    return r.status_code, dict(r.headers), r.content


class Fetcher:
    """Polite page fetcher: robots.txt honored, per-host and global
    concurrency ceilings enforced."""

    USER_AGENT = "codeloop-tools/0.1"

    def __init__(
        self,
        http_get: HttpGet | None = None,
        *,
        respect_robots: bool = True,
        per_host_limit: int = 2,
        global_limit: int = 16,
    ) -> None:
        self._http_get = http_get or _requests_get
        self._respect_robots = respect_robots
        self._global = threading.Semaphore(global_limit)
        self._per_host_limit = per_host_limit
        self._host_slots: dict[str, threading.Semaphore] = {}
        self._robots: dict[str, robotparser.RobotFileParser | None] = {}
        self._lock = threading.Lock()

    def _host_slot(self, host: str) -> threading.Semaphore:
        with self._lock:
            slot = self._host_slots.get(host)
            if slot is None:
                slot = threading.Semaphore(self._per_host_limit)
                self._host_slots[host] = slot
            return slot

    def _robots_for(self, scheme: str, host: str) -> robotparser.RobotFileParser | None:
        with self._lock:
            if host in self._robots:
                return self._robots[host]
        parser: robotparser.RobotFileParser | None = None
        try:
            status, _, body = self._http_get(f"{scheme}://{host}/robots.txt")
            if status == 200:
                parser = robotparser.RobotFileParser()
                parser.parse(body.decode("utf-8", errors="replace").splitlines())
        except Exception:
            parser = None  # unreachable robots file: crawl permitted
        with self._lock:
            self._robots[host] = parser
        return parser

    def get(self, url: str) -> FetchedDoc:
        parts = urlsplit(url)
        if parts.scheme not in ("http", "https") or not parts.netloc:
            raise BadRequest(f"not an absolute http(s) URL: {url!r}")
        host = parts.netloc
        if self._respect_robots:
            rules = self._robots_for(parts.scheme, host)
            if rules is not None and not rules.can_fetch(self.USER_AGENT, url):
                raise RobotsDisallowed(f"robots.txt disallows {url}")
        slot = self._host_slot(host)
        with self._global, slot:
            status, headers, body = self._http_get(url)
        content_type = ""
        for k, v in headers.items():
            if k.lower() == "content-type":
                content_type = v
                break
        return FetchedDoc(url=url, status=status, content_type=content_type, body=body)


def _rewrite(url: str, rules: tuple[tuple[str, str], ...]) -> str | None:
    for pattern, repl in rules:
        if re.match(pattern, url):
            return re.sub(pattern, repl, url)
    return None


def _looks_like_pdf(doc: FetchedDoc) -> bool:
    return "pdf" in doc.content_type.lower() or doc.body[:5] == b"%PDF-"


def _passages(text: str, query: str, config: ParseConfig) -> list[Passage]:
    return extract_relevant(
        text, query, config.relevance_method, top_k=config.top_passages
    )


def _parse_general(
    fetcher: Fetcher, url: str, query: str, config: ParseConfig
) -> ParseResponse:
    attempts: list[tuple[str, str]] = []
    try:
        doc = fetcher.get(url)
    except ConnectionError as exc:
        attempts.append(("general", f"fetch error: {exc}"))
        raise FetchFailed(f"could not fetch {url}", attempts)
    if not doc.ok:
        attempts.append(("general", f"status {doc.status}"))
        raise FetchFailed(f"fetch of {url} returned {doc.status}", attempts)
    html = doc.text()
    page = extract_main_text(html)
    attempts.append(
        ("general", "ok (fallback extractor)" if page.used_fallback else "ok")
    )
    if not page.text.strip():
        raise ContentEmpty(f"no extractable content at {url}")
    return ParseResponse(
        source_url=url,
        strategy=STRATEGY_GENERAL,
        relevant_passages=_passages(page.text, query, config),
        subpages=harvest_links(html, url, limit=config.max_subpages),
        fetch_diagnostics={"attempts": attempts},
    )


def _parse_paper(
    fetcher: Fetcher, url: str, query: str, config: ParseConfig
) -> ParseResponse:
    attempts: list[tuple[str, str]] = []

    # HTML rendering first, and the attempt is recorded even when no
    # rewrite produces a candidate: the ordering invariant is part of
    # the response contract.
    html_url = _rewrite(url, config.paper_html_rewrites)
    if html_url is None and not url.lower().endswith(".pdf"):
        html_url = url
    html_text = ""
    html_doc_markup = ""
    if html_url is None:
        attempts.append(("paper-html", "no candidate"))
    else:
        try:
            doc = fetcher.get(html_url)
            if not doc.ok:
                attempts.append(("paper-html", f"status {doc.status}"))
            elif _looks_like_pdf(doc):
                attempts.append(("paper-html", "served a PDF body"))
            else:
                html_doc_markup = doc.text()
                page = extract_main_text(html_doc_markup)
                words = len(page.text.split())
                if words >= config.completeness_words:
                    attempts.append(("paper-html", f"ok ({words} words)"))
                    html_text = page.text
                else:
                    attempts.append(
                        ("paper-html", f"incomplete ({words} words)")
                    )
        except (ConnectionError, RobotsDisallowed) as exc:
            attempts.append(("paper-html", f"fetch error: {exc}"))

    if html_text:
        return ParseResponse(
            source_url=url,
            strategy=STRATEGY_PAPER_HTML,
            relevant_passages=_passages(html_text, query, config),
            subpages=harvest_links(
                html_doc_markup, html_url or url, limit=config.max_subpages
            ),
            fetch_diagnostics={"attempts": attempts},
        )

    pdf_url = (
        url
        if url.lower().endswith(".pdf")
        else _rewrite(url, config.paper_pdf_rewrites)
    )
    if pdf_url is None:
        attempts.append(("paper-pdf", "no candidate"))
        raise FetchFailed(f"no usable rendering of {url}", attempts)
    try:
        doc = fetcher.get(pdf_url)
    except (ConnectionError, RobotsDisallowed) as exc:
        attempts.append(("paper-pdf", f"fetch error: {exc}"))
        raise FetchFailed(f"no usable rendering of {url}", attempts)
    if not doc.ok:
        attempts.append(("paper-pdf", f"status {doc.status}"))
        raise FetchFailed(f"no usable rendering of {url}", attempts)
    text = pdf_extract_text(doc.body)
    if not text.strip():
        attempts.append(("paper-pdf", "no extractable text"))
        raise FetchFailed(f"no usable rendering of {url}", attempts)
    attempts.append(("paper-pdf", f"ok ({len(text.split())} words)"))
    return ParseResponse(
        source_url=url,
        strategy=STRATEGY_PAPER_PDF,
        relevant_passages=_passages(text, query, config),
        subpages=[],
        fetch_diagnostics={"attempts": attempts},
    )


def parse(
    fetcher: Fetcher,
    url: str,
    query: str,
    mode: str = "auto",
    config: ParseConfig | None = None,
) -> ParseResponse:
    """Parse one page for query-relevant content."""
    config = config or ParseConfig()
    parts = urlsplit(url or "")
    if parts.scheme not in ("http", "https") or not parts.netloc:
        raise BadRequest(f"not an absolute http(s) URL: {url!r}")
    if not query or not query.strip():
        raise EmptyQuery("parse query must be non-empty")
    if mode not in MODES:
        raise BadRequest(f"mode must be one of {MODES}, got {mode!r}")
    route = classify(url, config) if mode == "auto" else mode
    if route == "paper":
        return _parse_paper(fetcher, url, query, config)
    return _parse_general(fetcher, url, query, config)
