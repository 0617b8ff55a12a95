"""Splitting tag-structured model streams into typed segments.

Two independent routes produce the same segmentation:

* :func:`segment` walks a complete string in one pass (regex-driven).
* :class:`StreamParser` consumes arbitrary chunks and emits events as
  soon as text is unambiguous, holding back at most ``max_tag_len - 1``
  characters so tags split across chunk boundaries are never missed.

Grammar: a stream is optional leading answer text, then an optional
think region (``<think>`` ... ``</think>``) whose body interleaves free
thinking text with code blocks and execution-result blocks, then the
answer (everything after the first ``</think>``). A tag that is illegal
in its region is not structural: it stays in the enclosing segment's
text verbatim (the streaming route additionally reports it as a
``MALFORMED_TAG`` event). ``reconstruct`` inverts either route exactly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable

from .tags import DEFAULT_TAGS, TagSet


class SegmentKind(str, Enum):
    THINK = "think"
    CODE = "code"
    EXEC_RESULT = "exec_result"
    ANSWER = "answer"


@dataclass
class Segment:
    """One contiguous region of stream text, tags excluded.

    ``span`` is the character range of ``text`` in the raw stream.
    ``closed`` is False when the stream ended inside the segment (its
    closing delimiter never arrived). ``injected`` marks text that was
    fed by the runtime rather than generated by the model.
    """

    kind: SegmentKind
    text: str
    span: tuple[int, int]
    closed: bool = True
    injected: bool = False

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "text": self.text}


class EventType(str, Enum):
    SEGMENT_OPENED = "segment_opened"
    TEXT_DELTA = "text_delta"
    SEGMENT_CLOSED = "segment_closed"
    MALFORMED_TAG = "malformed_tag"
    STREAM_ENDED = "stream_ended"


@dataclass
class ParseEvent:
    type: EventType
    kind: SegmentKind | None = None
    text: str | None = None


# Region names double as parser states.
_LEADING = "leading"
_THINK = "think"
_CODE = "code"
_EXEC = "exec"
_AFTER = "after"

# Text outside any block accumulates into a segment of the region's
# own kind, created lazily on the first character.
_TEXT_KIND = {_LEADING: SegmentKind.ANSWER, _THINK: SegmentKind.THINK}


def segment(
    text: str,
    tags: TagSet = DEFAULT_TAGS,
    *,
    recognize_exec_results: bool = True,
) -> list[Segment]:
    """Split a complete stream into ordered segments in one pass.

    With ``recognize_exec_results=False`` the execution-result tags are
    treated like any other out-of-place tag (kept as literal think
    text), which is how model-generated text is parsed at runtime.
    """
    pattern = re.compile("|".join(re.escape(t) for t in tags.all()))
    segs: list[Segment] = []
    region = _LEADING
    baseline = 0  # len(segs) when the think region opened
    cur: SegmentKind | None = None
    parts: list[str] = []
    start = 0

    def open_seg(kind: SegmentKind, at: int) -> None:
        nonlocal cur, parts, start
        cur, parts, start = kind, [], at

    def close_seg(end: int, closed: bool = True) -> None:
        nonlocal cur
        segs.append(Segment(cur, "".join(parts), (start, end), closed))
        cur = None

    def put_text(s: str, at: int) -> None:
        if not s:
            return
        if cur is None:
            open_seg(_TEXT_KIND[region], at)
        parts.append(s)

    last = 0
    for m in pattern.finditer(text):
        put_text(text[last : m.start()], last)
        tag = m.group(0)
        last = m.end()
        structural = False
        if region == _LEADING and tag == tags.think_open:
            if cur is not None:
                close_seg(m.start())
            region = _THINK
            baseline = len(segs)
            structural = True
        elif region == _THINK:
            if tag == tags.code_open:
                if cur is not None:
                    close_seg(m.start())
                open_seg(SegmentKind.CODE, m.end())
                region = _CODE
                structural = True
            elif tag == tags.result_open and recognize_exec_results:
                if cur is not None:
                    close_seg(m.start())
                open_seg(SegmentKind.EXEC_RESULT, m.end())
                region = _EXEC
                structural = True
            elif tag == tags.think_close:
                if cur is not None:
                    close_seg(m.start())
                if len(segs) == baseline:
                    # An empty think region still yields a segment so the
                    # close tag's position survives round-tripping.
                    segs.append(
                        Segment(SegmentKind.THINK, "", (m.start(), m.start()))
                    )
                region = _AFTER
                open_seg(SegmentKind.ANSWER, m.end())
                structural = True
        elif region == _CODE and tag == tags.code_close:
            close_seg(m.start())
            region = _THINK
            structural = True
        elif region == _EXEC and tag == tags.result_close:
            close_seg(m.start())
            region = _THINK
            structural = True
        if not structural:
            put_text(tag, m.start())

    put_text(text[last:], last)
    end = len(text)
    if cur is not None:
        close_seg(end, closed=region in (_LEADING, _AFTER))
    elif region == _THINK and len(segs) == baseline:
        segs.append(Segment(SegmentKind.THINK, "", (end, end), closed=False))
    return segs


class StreamParser:
    """Incremental segmenter for chunked streams.

    ``feed`` accepts chunks of any size and returns the parse events the
    chunk resolved; completed segments accumulate on ``.segments``. Text
    is released as soon as it provably belongs to the current segment:
    only a trailing proper prefix of some tag is held back, so the
    internal buffer never exceeds the longest tag length minus one.

    ``recognize_exec_results=False`` makes execution-result tags inert
    in ordinary feeds; a feed with ``injected=True`` (used for runtime-
    provided result blocks) recognizes them regardless and marks the
    segments it opens as injected.
    """

    def __init__(
        self,
        tags: TagSet = DEFAULT_TAGS,
        *,
        recognize_exec_results: bool = True,
    ) -> None:
        self.tags = tags
        self.segments: list[Segment] = []
        self._recognize_exec = recognize_exec_results
        self._buf = ""
        self._pos = 0  # absolute offset of _buf[0] in the raw stream
        self._region = _LEADING
        self._baseline = 0
        self._cur: SegmentKind | None = None
        self._parts: list[str] = []
        self._start = 0
        self._injected_cur = False
        self._finalized = False

    # -- segment bookkeeping -------------------------------------------

    def _open(
        self, kind: SegmentKind, at: int, injected: bool, events: list[ParseEvent]
    ) -> None:
        self._cur, self._parts, self._start = kind, [], at
        self._injected_cur = injected
        events.append(ParseEvent(EventType.SEGMENT_OPENED, kind=kind))

    def _close(self, end: int, events: list[ParseEvent], closed: bool = True) -> None:
        seg = Segment(
            self._cur,
            "".join(self._parts),
            (self._start, end),
            closed,
            self._injected_cur,
        )
        self.segments.append(seg)
        events.append(ParseEvent(EventType.SEGMENT_CLOSED, kind=self._cur))
        self._cur = None

    def _text(
        self,
        s: str,
        at: int,
        injected: bool,
        events: list[ParseEvent],
        *,
        malformed: bool = False,
    ) -> None:
        if not s:
            return
        if self._cur is None:
            self._open(_TEXT_KIND[self._region], at, injected, events)
        self._parts.append(s)
        kind = EventType.MALFORMED_TAG if malformed else EventType.TEXT_DELTA
        events.append(ParseEvent(kind, text=s))

    # -- tag dispatch ----------------------------------------------------

    def _tag(
        self, tag: str, at: int, injected: bool, events: list[ParseEvent]
    ) -> None:
        t = self.tags
        region = self._region
        if region == _LEADING and tag == t.think_open:
            if self._cur is not None:
                self._close(at, events)
            self._region = _THINK
            self._baseline = len(self.segments)
            return
        if region == _THINK:
            if tag == t.code_open:
                if self._cur is not None:
                    self._close(at, events)
                self._open(SegmentKind.CODE, at + len(tag), injected, events)
                self._region = _CODE
                return
            if tag == t.result_open and (self._recognize_exec or injected):
                if self._cur is not None:
                    self._close(at, events)
                self._open(SegmentKind.EXEC_RESULT, at + len(tag), injected, events)
                self._region = _EXEC
                return
            if tag == t.think_close:
                if self._cur is not None:
                    self._close(at, events)
                if len(self.segments) == self._baseline:
                    self._open(SegmentKind.THINK, at, injected, events)
                    self._close(at, events)
                self._region = _AFTER
                self._open(SegmentKind.ANSWER, at + len(tag), injected, events)
                return
        elif region == _CODE and tag == t.code_close:
            self._close(at, events)
            self._region = _THINK
            return
        elif region == _EXEC and tag == t.result_close:
            self._close(at, events)
            self._region = _THINK
            return
        self._text(tag, at, injected, events, malformed=True)

    # -- public API ------------------------------------------------------

    def feed(self, chunk: str, *, injected: bool = False) -> list[ParseEvent]:
        """Consume a chunk; returns events resolved by it.

        A tag split across feeds is dispatched under the flags of the
        feed that completes it.
        """
        if self._finalized:
            raise RuntimeError("parser already finalized")
        events: list[ParseEvent] = []
        buf = self._buf + chunk
        i = 0
        while True:
            hit_at, hit = -1, None
            for tag in self.tags.all():
                j = buf.find(tag, i)
                if j != -1 and (hit_at == -1 or j < hit_at):
                    hit_at, hit = j, tag
            if hit is None:
                break
            self._text(buf[i:hit_at], self._pos + i, injected, events)
            self._tag(hit, self._pos + hit_at, injected, events)
            i = hit_at + len(hit)
        tail = buf[i:]
        held = self._held_len(tail)
        cut = len(tail) - held
        self._text(tail[:cut], self._pos + i, injected, events)
        self._buf = tail[cut:]
        self._pos += len(buf) - held
        return events

    def _held_len(self, tail: str) -> int:
        limit = min(len(tail), self.tags.max_len - 1)
        for k in range(limit, 0, -1):
            suffix = tail[-k:]
            if any(t.startswith(suffix) for t in self.tags.all()):
                return k
        return 0

    def finalize(self) -> list[ParseEvent]:
        """Flush held text, close the open segment, end the stream."""
        if self._finalized:
            raise RuntimeError("parser already finalized")
        events: list[ParseEvent] = []
        if self._buf:
            # A held tag prefix that never completed is plain text.
            self._text(self._buf, self._pos, False, events)
            self._pos += len(self._buf)
            self._buf = ""
        if self._cur is not None:
            self._close(self._pos, events, closed=self._region in (_LEADING, _AFTER))
        elif self._region == _THINK and len(self.segments) == self._baseline:
            self._open(SegmentKind.THINK, self._pos, False, events)
            self._close(self._pos, events, closed=False)
        self._finalized = True
        events.append(ParseEvent(EventType.STREAM_ENDED))
        return events

    @property
    def finalized(self) -> bool:
        return self._finalized


def reconstruct(segments: Iterable[Segment], tags: TagSet = DEFAULT_TAGS) -> str:
    """Rebuild the exact raw stream a segmentation came from."""
    out: list[str] = []
    state = _LEADING
    for seg in segments:
        if seg.kind is SegmentKind.ANSWER:
            if state == _THINK:
                out.append(tags.think_close)
                state = _AFTER
            out.append(seg.text)
            continue
        if state == _AFTER:
            raise ValueError("think-region segment after the answer region")
        if state == _LEADING:
            out.append(tags.think_open)
            state = _THINK
        if seg.kind is SegmentKind.THINK:
            out.append(seg.text)
        elif seg.kind is SegmentKind.CODE:
            out.append(tags.code_open + seg.text)
            if seg.closed:
                out.append(tags.code_close)
        else:
            out.append(tags.result_open + seg.text)
            if seg.closed:
                out.append(tags.result_close)
    return "".join(out)
