#!/usr/bin/env python3
"""Record the checked-in cassettes that replay-mode tests consume.

Run from the repository root:

    python3 scripts/record_fixtures.py

Everything is served from deterministic stand-ins: fixture pages written
to fixtures/pages/ and a canned search provider, wired into the tool
service through its injection points. No network access happens, and
re-running refreshes recorded_at timestamps while leaving response
content identical. fixtures/cassettes/INDEX.md maps human-readable
fixture slugs to cassette hashes.
"""

from __future__ import annotations

import sys
from io import BytesIO
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent

try:
    import codeloop  # noqa: F401
except ImportError:
    sys.path.insert(0, str(ROOT / "src"))

from codeloop.tools.fixtures import canonical_request, request_hash
from codeloop.tools.parsing import Fetcher, ParseConfig
from codeloop.tools.search import (
    EntityFacts,
    Preview,
    SearchResponse,
    StaticSearchProvider,
)
from codeloop.tools.service import ServiceConfig, ToolService

PAGES_DIR = ROOT / "fixtures" / "pages"
CASSETTES_DIR = ROOT / "fixtures" / "cassettes"

# -- fixture pages --------------------------------------------------------

ION_HTML = """<html>
<head><title>Ion Thrusters Explained</title></head>
<body>
<nav><a href="/">Home</a> | <a href="/topics">Topics</a></nav>
<main>
<h1>Ion thrusters explained</h1>
<p>An ion thruster ionizes a neutral propellant, almost always xenon,
and accelerates the resulting ions through a charged grid to produce
thrust. The exhaust velocity far exceeds what chemical combustion can
reach, which is why deep-space missions favour electric propulsion for
long cruises despite its gentle push.</p>
<p>Propellant throughput and grid erosion set the service life of a
gridded thruster. Ground endurance tests have demonstrated tens of
thousands of operating hours on a single engine, with xenon mass
efficiency holding steady across throttle levels.</p>
<p>Flight history: <a href="/missions/deep-space-1">Deep Space 1</a>
carried the NSTAR engine on the first interplanetary demonstration,
and <a href="/missions/dawn">the Dawn spacecraft</a> later used three
of them to orbit two different asteroids.</p>
<p>For laboratory fundamentals, see
<a href="http://labs.fixture.test/plasma-sheaths">plasma sheath notes</a>
covering the physics at the screen grid.</p>
</main>
<footer>Fixture footer.</footer>
</body></html>
"""

LINKS_HTML = """<html>
<head><title>Further Reading</title></head>
<body>
<main>
<h1>Further reading on electric propulsion</h1>
<p>Start with <a href="/guides/hall-thrusters">the Hall thruster guide</a>
for an annular-channel design that trades grid erosion for wall losses.</p>
<p>Then <a href="/guides/power-processing">power processing units</a>
explains how solar array output becomes beam current.</p>
<p>Finally <a href="http://journals.fixture.test/electric-propulsion-review">
a review journal article</a> surveys forty years of flight programs.</p>
</main>
</body></html>
"""

SOUP_HTML = (
    "<body><div>nav nav nav</div><form>"
    + "Recovered fallback paragraph about regenerative braking in trams, "
    "where traction motors return energy to the overhead line during "
    "deceleration and dispatchers schedule downhill runs to feed uphill "
    "departures. " * 8
    + "</form></body"
)


def _paper_paragraphs() -> list[str]:
    themes = [
        "Electrostatic acceleration of xenon ions yields exhaust velocities "
        "above thirty kilometres per second, an order of magnitude past "
        "chemical combustion limits.",
        "Grid erosion from charge-exchange ions remains the dominant wear "
        "mechanism, concentrated at the accelerator grid apertures.",
        "Throttling across a ten-to-one power range preserves specific "
        "impulse within a narrow band when the beam voltage is held fixed.",
        "Cathode insert depletion follows a predictable schedule, allowing "
        "end-of-life forecasts from barium transport models.",
        "Mission analysis shows dual-engine redundancy recovers ninety "
        "percent of nominal throughput after a single failure.",
        "Thermal margins at the discharge chamber wall limit burst power "
        "more tightly than the power processing unit does.",
    ]
    out = []
    for i in range(18):
        t = themes[i % len(themes)]
        out.append(f"Section {i + 1}. {t} Repeated validation over {120 + i} "
                   f"hours confirmed the trend within measurement error.")
    return out


PAPER_COMPLETE_HTML = (
    "<html><head><title>Long-Duration Ion Engine Wear</title></head>"
    "<body><main><h1>Long-Duration Ion Engine Wear</h1>"
    + "".join(f"<p>{p} {p}</p>" for p in _paper_paragraphs())
    + '<p>Artifacts: <a href="/code/wear-model">wear model source</a>.</p>'
    "</main></body></html>"
)

PAPER_STUB_HTML = (
    "<html><body><main><p>Rendering incomplete. Abstract only: ion engine "
    "wear study, full text not converted.</p></main></body></html>"
)


def make_paper_pdf() -> bytes:
    from reportlab.pdfgen import canvas

    buf = BytesIO()
    c = canvas.Canvas(buf)
    text = c.beginText(60, 760)
    text.textLine("Long-Duration Ion Engine Wear")
    text.textLine("")
    for p in _paper_paragraphs():
        words = p.split()
        line: list[str] = []
        for w in words:
            line.append(w)
            if sum(len(x) + 1 for x in line) > 84:
                text.textLine(" ".join(line))
                line = []
        if line:
            text.textLine(" ".join(line))
        text.textLine("")
    c.drawText(text)
    c.save()
    return buf.getvalue()


PAGE_FILES = {
    "ion.html": ION_HTML,
    "links.html": LINKS_HTML,
    "soup.html": SOUP_HTML,
    "paper_complete.html": PAPER_COMPLETE_HTML,
    "paper_stub.html": PAPER_STUB_HTML,
}

ROUTES = {
    "http://pages.fixture.test/ion": ("text/html", "ion.html"),
    "http://pages.fixture.test/links": ("text/html", "links.html"),
    "http://pages.fixture.test/soup": ("text/html", "soup.html"),
    "http://papers.fixture.test/html/wear2024": ("text/html", "paper_complete.html"),
    "http://papers.fixture.test/html/cathode2023": ("text/html", "paper_stub.html"),
    "http://papers.fixture.test/pdf/cathode2023.pdf": ("application/pdf", "paper.pdf"),
    "http://papers.fixture.test/pdf/standalone.pdf": ("application/pdf", "paper.pdf"),
}

PARSE_CONFIG = ParseConfig(
    paper_html_rewrites=(
        (r"^http://papers\.fixture\.test/abs/(\w+)$",
         r"http://papers.fixture.test/html/\1"),
    ),
    paper_pdf_rewrites=(
        (r"^http://papers\.fixture\.test/abs/(\w+)$",
         r"http://papers.fixture.test/pdf/\1.pdf"),
    ),
)

SEARCH_FIXTURES = {
    "codeloop agent repository": SearchResponse(
        previews=[
            Preview(
                "example-org/codeloop: reasoning-loop agent runtime",
                "https://github.com/example-org/codeloop",
                "Runtime that lets a reasoning model execute code mid-thought "
                "and read the results before answering.",
            ),
            Preview(
                "codeloop documentation",
                "https://example-org.github.io/codeloop/",
                "Install, configure providers, run the benchmark harness.",
            ),
        ],
        entity_facts=EntityFacts(
            name="codeloop",
            description="Open-source agent runtime for tool-augmented reasoning.",
            attributes=[("License", "MIT"), ("Language", "Python")],
        ),
        related_queries=["codeloop benchmark results", "agent runtime comparison"],
    ),
    "ion thruster service life": SearchResponse(
        previews=[
            Preview(
                "Ion Thrusters Explained",
                "http://pages.fixture.test/ion?utm_source=serp",
                "Grid erosion and propellant throughput set service life.",
            ),
            Preview(
                "Long-Duration Ion Engine Wear",
                "http://papers.fixture.test/abs/wear2024",
                "Wear study across extended burn campaigns.",
            ),
        ],
        related_queries=["nstar engine hours", "xenon throughput limit"],
    ),
    "xenon hall effect comparison": SearchResponse(
        previews=[
            Preview(
                "Further Reading",
                "http://pages.fixture.test/links",
                "Hall thrusters trade grid erosion for wall losses.",
            ),
        ],
    ),
    "widget corporation facts": SearchResponse(
        previews=[
            Preview(
                "Widget Corporation - official site",
                "https://widget.example/",
                "Industrial widgets since 1999.",
            ),
        ],
        entity_facts=EntityFacts(
            name="Widget Corporation",
            description="Industrial widget manufacturer.",
            attributes=[("Founded", "1999"), ("Headquarters", "Springfield")],
        ),
        related_queries=["widget corporation careers"],
    ),
}

# slug -> (op, kwargs); slugs document intent, hashes key the files
REQUESTS = [
    ("github-repo-query", "search", {"query": "codeloop agent repository", "top_k": 5}),
    ("service-life-query", "search", {"query": "ion thruster service life", "top_k": 5}),
    ("hall-comparison-query", "search", {"query": "xenon hall effect comparison", "top_k": 3}),
    ("entity-facts-query", "search", {"query": "widget corporation facts", "top_k": 10}),
    ("general-page-auto", "parse", {"url": "http://pages.fixture.test/ion", "query": "xenon service life", "mode": "auto"}),
    ("general-page-explicit", "parse", {"url": "http://pages.fixture.test/ion", "query": "xenon service life", "mode": "general"}),
    ("three-link-page", "parse", {"url": "http://pages.fixture.test/links", "query": "hall thruster guide", "mode": "general"}),
    ("fallback-extraction-page", "parse", {"url": "http://pages.fixture.test/soup", "query": "regenerative braking", "mode": "general"}),
    ("paper-html-complete", "parse", {"url": "http://papers.fixture.test/abs/wear2024", "query": "grid erosion rate", "mode": "paper"}),
    ("paper-pdf-fallback", "parse", {"url": "http://papers.fixture.test/abs/cathode2023", "query": "cathode depletion", "mode": "paper"}),
    ("paper-direct-pdf", "parse", {"url": "http://papers.fixture.test/pdf/standalone.pdf", "query": "exhaust velocity", "mode": "paper"}),
]


def write_pages() -> None:
    PAGES_DIR.mkdir(parents=True, exist_ok=True)
    for name, content in PAGE_FILES.items():
        (PAGES_DIR / name).write_text(content, "utf-8")
    (PAGES_DIR / "paper.pdf").write_bytes(make_paper_pdf())


def fixture_http_get(url: str):
    route = ROUTES.get(url)
    if route is None:
        return 404, {"Content-Type": "text/plain"}, b"no fixture route"
    ctype, fname = route
    return 200, {"Content-Type": ctype}, (PAGES_DIR / fname).read_bytes()


def main() -> int:
    write_pages()
    CASSETTES_DIR.mkdir(parents=True, exist_ok=True)
    service = ToolService(
        ServiceConfig(
            mode="record",
            fixture_dir=CASSETTES_DIR,
            provider=StaticSearchProvider(SEARCH_FIXTURES),
            fetcher=Fetcher(fixture_http_get, respect_robots=False),
            parse_config=PARSE_CONFIG,
        )
    )
    index_lines = [
        "# Cassette index",
        "",
        "Generated by scripts/record_fixtures.py; do not edit by hand.",
        "",
    ]
    for slug, op, kwargs in REQUESTS:
        if op == "search":
            service.do_search(**kwargs)
        else:
            service.do_parse(**kwargs)
        h = request_hash(canonical_request(op, **kwargs))
        index_lines.append(f"- `{slug}` -> `{h}.json` ({op}: {kwargs})")
        print(f"recorded {slug} -> {h}.json")
    (CASSETTES_DIR / "INDEX.md").write_text("\n".join(index_lines) + "\n", "utf-8")
    print(f"{len(REQUESTS)} cassettes in {CASSETTES_DIR}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
