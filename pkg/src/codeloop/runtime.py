"""The tool-augmented agent loop.

One trace: seed the assistant message with the think-open tag plus the
first-person guidance, stream generation with the code-close tag as the
stop sequence, dispatch each closed code block to the sandbox session,
inject the rendered result wrapped in the execution-result tags, and
resume, until the model ends its message, or an interaction, token, or
wall-clock cap fires. Sandbox failures are injected exactly like
successes so the model can read the error and adapt.

Sampling parameters are never varied by the loop: every generation call
in a trace carries the same ``GenParams`` (remaining token budget is
passed as a separate per-call ceiling), and a literal code-close tag
outside a code block just resumes generation instead of dispatching.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources

from .gateway import Context, Gateway, GenParams, Message, ProviderError, StopReason
from .sandbox import ExecStatus, ExecutionResult, SandboxSession
from .segmenting import Segment, SegmentKind, StreamParser, reconstruct
from .tags import DEFAULT_TAGS, TagSet


class EmptyQuery(ValueError):
    pass


def default_guidance() -> str:
    """The stock first-person guidance text (shipped as package data;
    a reconstruction, since only example sentences of the original are
    public)."""
    return (
        resources.files("codeloop.prompts")
        .joinpath("guidance.txt")
        .read_text(encoding="utf-8")
    )


@dataclass
class AgentConfig:
    guidance_text: str = field(default_factory=default_guidance)
    gen_params: GenParams = field(default_factory=GenParams)
    max_interactions: int = 20
    max_wall_clock_s: float = 1800.0
    exec_result_char_cap: int = 8192
    exec_timeout_ms: int | None = None  # None → executor default
    answer_marker: str = "Final Answer:"

    def __post_init__(self) -> None:
        if self.max_interactions < 1:
            raise ValueError("max_interactions must be >= 1")
        if self.max_wall_clock_s <= 0 or self.exec_result_char_cap <= 0:
            raise ValueError("caps must be positive")


class Termination(str, Enum):
    ANSWERED = "answered"
    INTERACTION_CAP = "interaction_cap"
    TOKEN_CAP = "token_cap"
    WALL_CLOCK_CAP = "wall_clock_cap"
    PROVIDER_FAILURE = "provider_failure"


@dataclass
class Trace:
    query: str
    role_prompt: str
    segments: list[Segment]
    interactions: int
    answer: str | None
    token_usage: list[int]
    timing: dict[str, float]
    termination: Termination
    flags: list[str] = field(default_factory=list)

    @property
    def transcript(self) -> str:
        """The full assistant-side text, rebuilt from segments."""
        return reconstruct(self.segments)

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "role_prompt": self.role_prompt,
            "segments": [s.to_dict() for s in self.segments],
            "interactions": self.interactions,
            "answer": self.answer,
            "token_usage": self.token_usage,
            "timing": self.timing,
            "termination": self.termination.value,
            "flags": self.flags,
        }


def prepare_context(
    query: str,
    role_prompt: str,
    config: AgentConfig,
    tags: TagSet = DEFAULT_TAGS,
) -> list[Message]:
    """Build the message list whose assistant tail is the prefill: the
    think-open tag immediately followed by the guidance text."""
    if not query or not query.strip():
        raise EmptyQuery("query must be non-empty")
    messages: list[Message] = []
    if role_prompt:
        messages.append(Message("system", role_prompt))
    messages.append(Message("user", query))
    messages.append(Message("assistant", tags.think_open + config.guidance_text))
    return messages


def render_execution(result: ExecutionResult, cap: int) -> str:
    """Render a sandbox outcome for injection: stdout, then a marked
    stderr block if any, then a status line unless the run succeeded;
    over-cap output keeps the head (60%) and tail (40%) around an
    elision marker stating how much was dropped."""
    parts = []
    if result.stdout:
        parts.append(result.stdout)
    if result.stderr:
        parts.append("[stderr]\n" + result.stderr)
    if result.status is not ExecStatus.SUCCESS:
        parts.append(f"[execution failed: {result.status.value}]")
    rendered = "\n".join(parts)
    if len(rendered) > cap:
        head = int(cap * 0.6)
        tail = cap - head
        omitted = len(rendered) - head - tail
        rendered = (
            rendered[:head]
            + f"\n[... {omitted} chars omitted ...]\n"
            + rendered[-tail:]
        )
    return rendered


def extract_answer(
    segments: list[Segment], marker: str = "Final Answer:"
) -> str | None:
    """Answer text of a trace: the answer segments joined and trimmed;
    if the marker occurs, only the text after its last occurrence."""
    answer_segs = [s for s in segments if s.kind is SegmentKind.ANSWER]
    if not answer_segs:
        return None
    text = "".join(s.text for s in answer_segs)
    if marker and marker in text:
        text = text.rsplit(marker, 1)[1]
    text = text.strip()
    return text or None


def run_trace(
    query: str,
    role_prompt: str,
    gateway: Gateway,
    sandbox_session: SandboxSession | None,
    config: AgentConfig,
    *,
    tags: TagSet = DEFAULT_TAGS,
    clock=time.monotonic,
) -> Trace:
    """Run one agent loop to termination.

    ``sandbox_session`` may be None for a plain (tool-less) trace: no
    stop sequence is armed and no code is ever dispatched. The session
    is borrowed, not owned; the caller closes it.
    """
    context = prepare_context(query, role_prompt, config, tags)
    prefill = context[-1].content
    parser = StreamParser(tags, recognize_exec_results=False)
    parser.feed(prefill)
    transcript: list[str] = [prefill]

    tooled = sandbox_session is not None
    params = (
        replace(config.gen_params, stop_sequences=(tags.code_close,))
        if tooled
        else config.gen_params
    )
    budget = config.gen_params.max_new_tokens
    used = 0
    token_usage: list[int] = []
    interactions = 0
    dispatched_codes = 0
    gen_s = 0.0
    exec_s = 0.0
    flags: list[str] = []
    started = clock()

    def on_chunk(text: str) -> None:
        parser.feed(text)
        transcript.append(text)

    def generate() -> object:
        nonlocal used, gen_s
        ctx = list(context[:-1]) + [Message("assistant", "".join(transcript))]
        t0 = clock()
        try:
            out = gateway.generate_stream(
                ctx, params, on_chunk, max_tokens_cap=budget - used
            )
        finally:
            gen_s += clock() - t0
        used += out.tokens_generated
        token_usage.append(out.tokens_generated)
        return out

    termination: Termination | None = None
    while termination is None:
        if used >= budget:
            termination = Termination.TOKEN_CAP
            break
        if clock() - started > config.max_wall_clock_s:
            termination = Termination.WALL_CLOCK_CAP
            break
        try:
            out = generate()
        except ProviderError as exc:
            flags.append(f"provider failure: {exc}")
            termination = Termination.PROVIDER_FAILURE
            break
        if out.stop_reason is StopReason.MAX_TOKENS:
            termination = Termination.TOKEN_CAP
        elif out.stop_reason is StopReason.END_OF_MESSAGE:
            termination = Termination.ANSWERED  # provisional; checked below
        else:
            if not tooled:
                continue  # caller-supplied stop sequence; nothing to run
            code_segs = [
                s
                for s in parser.segments
                if s.kind is SegmentKind.CODE and s.closed
            ]
            if len(code_segs) <= dispatched_codes:
                continue  # literal code-close outside a code block
            dispatched_codes = len(code_segs)
            if interactions >= config.max_interactions:
                termination = Termination.INTERACTION_CAP
                break
            code = code_segs[-1]
            t1 = clock()
            try:
                result = sandbox_session.execute(
                    code.text, timeout_ms=config.exec_timeout_ms
                )
            except Exception as exc:
                result = ExecutionResult(
                    getattr(sandbox_session, "session_id", "?"),
                    ExecStatus.KILLED,
                    "",
                    f"executor failure: {exc}",
                )
                flags.append(f"sandbox error: {exc}")
            exec_s += clock() - t1
            interactions += 1
            rendered = render_execution(result, config.exec_result_char_cap)
            block = tags.result_open + _defuse(rendered, tags) + tags.result_close
            parser.feed(block, injected=True)
            transcript.append(block)

    if termination in (Termination.INTERACTION_CAP, Termination.WALL_CLOCK_CAP):
        # One best-effort pass to elicit an answer; nothing it produces
        # is executed, and the cap stays the recorded cause.
        if used < budget:
            try:
                generate()
            except ProviderError as exc:
                flags.append(f"provider failure in final pass: {exc}")

    parser.finalize()
    answer = extract_answer(parser.segments, config.answer_marker)
    if termination is Termination.ANSWERED and answer is None:
        termination = Termination.PROVIDER_FAILURE
        flags.append("stream ended without an answer")
    total_s = clock() - started
    return Trace(
        query=query,
        role_prompt=role_prompt,
        segments=parser.segments,
        interactions=interactions,
        answer=answer,
        token_usage=token_usage,
        timing={
            "generation_s": round(gen_s, 6),
            "execution_s": round(exec_s, 6),
            "total_s": round(total_s, 6),
        },
        termination=termination,
        flags=flags,
    )


def _defuse(rendered: str, tags: TagSet) -> str:
    """Keep injected framing unambiguous: a literal result-close tag
    inside rendered output would end the block early, so its slash is
    escaped. All other bytes pass through untouched."""
    return rendered.replace(
        tags.result_close, tags.result_close.replace("</", "<\\/", 1)
    )
