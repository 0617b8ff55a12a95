"""Sentinel tag strings that structure a reasoning model's output stream.

The defaults match the tokens emitted by DeepSeek-style reasoning models;
different model families can swap in their own sentinels as long as the
tag set stays prefix-free.
"""

from __future__ import annotations

from dataclasses import dataclass

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"
CODE_OPEN = "<code>"
CODE_CLOSE = "</code>"
RESULT_OPEN = "<execution_results>"
RESULT_CLOSE = "</execution_results>"


@dataclass(frozen=True)
class TagSet:
    """The six sentinel strings recognized by the stream segmenter."""

    think_open: str = THINK_OPEN
    think_close: str = THINK_CLOSE
    code_open: str = CODE_OPEN
    code_close: str = CODE_CLOSE
    result_open: str = RESULT_OPEN
    result_close: str = RESULT_CLOSE

    def __post_init__(self) -> None:
        tags = self.all()
        if len(set(tags)) != len(tags):
            raise ValueError("tag strings must be distinct")
        for t in tags:
            if not t:
                raise ValueError("tag strings must be non-empty")
            for u in tags:
                if t != u and u.startswith(t):
                    raise ValueError(f"{t!r} is a prefix of {u!r}")
                # A tag restarting inside another would make leftmost-match
                # scanning ambiguous; the first character must be unique to
                # position 0 across the whole set.
                if t[0] in u[1:]:
                    raise ValueError(
                        f"tag marker {t[0]!r} reappears inside {u!r}; "
                        "tag set is not scan-safe"
                    )

    def all(self) -> tuple[str, ...]:
        return (
            self.think_open,
            self.think_close,
            self.code_open,
            self.code_close,
            self.result_open,
            self.result_close,
        )

    @property
    def max_len(self) -> int:
        return max(len(t) for t in self.all())


DEFAULT_TAGS = TagSet()
