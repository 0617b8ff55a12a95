"""Record/replay cassettes for the tool service.

A cassette is one JSON file per request, content-addressed by the hash
of the normalized request. Replay mode answers exclusively from these
files, which keeps offline tests byte-deterministic.
"""

from __future__ import annotations

import hashlib
import json
import threading
from datetime import datetime, timezone
from pathlib import Path

from .search import normalize_url


def canonical_request(op: str, **fields) -> dict:
    """The normalized request that keys a cassette. Whitespace around
    the query and tracking noise in the URL never produce a second
    recording of the same logical request."""
    if op == "search":
        return {
            "op": "search",
            "query": str(fields["query"]).strip(),
            "top_k": int(fields["top_k"]),
        }
    if op == "parse":
        return {
            "op": "parse",
            "url": normalize_url(str(fields["url"])),
            "query": str(fields["query"]).strip(),
            "mode": str(fields.get("mode", "auto")),
        }
    raise ValueError(f"unknown op {op!r}")


def request_hash(request: dict) -> str:
    blob = json.dumps(request, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class FixtureStore:
    def __init__(self, directory: str | Path) -> None:
        self.directory = Path(directory)
        self._lock = threading.Lock()

    def _path(self, request: dict) -> Path:
        return self.directory / f"{request_hash(request)}.json"

    def lookup(self, request: dict) -> dict | None:
        """Recorded response for this request, or None."""
        path = self._path(request)
        with self._lock:
            if not path.exists():
                return None
            doc = json.loads(path.read_text("utf-8"))
        return doc["response"]

    def save(self, request: dict, response: dict) -> Path:
        doc = {
            "request_hash": request_hash(request),
            "request": request,
            "response": response,
            "recorded_at": datetime.now(timezone.utc).isoformat(),
        }
        path = self._path(request)
        with self._lock:
            self.directory.mkdir(parents=True, exist_ok=True)
            path.write_text(
                json.dumps(doc, sort_keys=True, indent=2) + "\n", "utf-8"
            )
        return path

    def __len__(self) -> int:
        if not self.directory.exists():
            return 0
        return sum(1 for _ in self.directory.glob("*.json"))
