"""Shared helpers for the test suite."""

from __future__ import annotations

import random

from codeloop.tags import DEFAULT_TAGS

TAGS = list(DEFAULT_TAGS.all())

# Atoms chosen to provoke boundary trouble: whole tags, tag fragments,
# lone angle brackets, unicode, and ordinary text.
_FRAGMENTS = [
    "<",
    ">",
    "</",
    "<thi",
    "nk>",
    "<cod",
    "e>",
    "<execution_res",
    "ults>",
    "</exec",
    "think",
    "code",
]
_WORDS = [
    "alpha ",
    "x = 1\n",
    "print(x)",
    "if a < b > c:",
    "β∑π",
    " ",
    "\n",
    "done.",
    "q?",
]


def make_fuzz_stream(rng: random.Random) -> str:
    """Random stream mixing real tags, tag fragments, and plain text."""
    parts = []
    for _ in range(rng.randrange(0, 40)):
        r = rng.random()
        if r < 0.40:
            parts.append(rng.choice(TAGS))
        elif r < 0.65:
            parts.append(rng.choice(_FRAGMENTS))
        else:
            parts.append(rng.choice(_WORDS))
    return "".join(parts)


def make_wellformed_stream(rng: random.Random) -> str:
    """Random stream that follows the grammar (no malformed tags)."""
    t = DEFAULT_TAGS

    def text() -> str:
        return "".join(
            rng.choice(_WORDS) for _ in range(rng.randrange(0, 4))
        )

    parts = [text(), t.think_open]
    for _ in range(rng.randrange(0, 5)):
        parts.append(text())
        if rng.random() < 0.5:
            parts.append(t.code_open + text() + t.code_close)
        else:
            parts.append(t.result_open + text() + t.result_close)
    parts.append(text())
    if rng.random() < 0.9:
        parts.append(t.think_close + text())
    return "".join(parts)


def random_chunks(rng: random.Random, s: str, max_chunk: int = 8) -> list[str]:
    chunks = []
    i = 0
    while i < len(s):
        k = rng.randrange(1, max_chunk + 1)
        chunks.append(s[i : i + k])
        i += k
    return chunks
