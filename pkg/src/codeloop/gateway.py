"""Model access: streaming generation with inclusive stop sequences.

The gateway wraps a model adapter (anything with a ``stream`` method
yielding text chunks) and adds the behavior the agent runtime needs:

* client-side stop-sequence detection that is invariant to how the
  provider happens to chunk the stream, with the stop sequence kept in
  the returned text (the runtime needs the closing tag it stopped on);
* a token ceiling enforced by chunk count, so a runaway stream is cut
  even when the provider ignores ``max_tokens``;
* bounded retries with exponential backoff, but only while nothing has
  been consumed yet; a stream that dies after delivering chunks is a
  terminal failure because replaying it could duplicate side effects.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Iterator, Protocol, Sequence


class ProviderError(RuntimeError):
    """The model provider failed to start or continue a stream."""


@dataclass(frozen=True)
class Message:
    role: str  # "system" | "user" | "assistant"
    content: str


Context = Sequence[Message]


@dataclass(frozen=True)
class GenParams:
    temperature: float = 0.6
    top_p: float = 0.95
    max_new_tokens: int = 65536
    stop_sequences: tuple[str, ...] = ()
    seed: int | None = None


class StopReason(str, Enum):
    STOP_SEQUENCE = "stop_sequence"
    MAX_TOKENS = "max_tokens"
    END_OF_MESSAGE = "end_of_message"


@dataclass
class GenOutcome:
    text: str  # includes the stop sequence when one fired
    stop_reason: StopReason
    stop_sequence: str | None
    tokens_generated: int


class ModelAdapter(Protocol):
    def stream(
        self, context: Context, params: GenParams, max_tokens: int
    ) -> Iterator[str]:
        """Yield text chunks; each yield counts as one token."""
        ...


class Gateway:
    def __init__(
        self,
        adapter: ModelAdapter,
        *,
        retries: int = 3,
        backoff_base: float = 1.0,
        sleep: Callable[[float], None] = time.sleep,
        max_in_flight: int | None = None,
    ) -> None:
        self.adapter = adapter
        self.retries = retries
        self.backoff_base = backoff_base
        self._sleep = sleep
        self._gate = (
            threading.Semaphore(max_in_flight) if max_in_flight else None
        )

    def generate_stream(
        self,
        context: Context,
        params: GenParams,
        on_chunk: Callable[[str], None] | None = None,
        *,
        max_tokens_cap: int | None = None,
    ) -> GenOutcome:
        """Run one generation, streaming accepted text to ``on_chunk``.

        ``max_tokens_cap`` tightens the ceiling for this call without
        touching ``params`` (the sampling parameters stay identical
        across calls; remaining-budget enforcement is separate).
        ``on_chunk`` only ever sees text that belongs to the final
        outcome: a tail short enough to hide a partial stop sequence is
        held back until it is resolved.
        """
        effective_max = params.max_new_tokens
        if max_tokens_cap is not None:
            effective_max = min(effective_max, max_tokens_cap)
        if self._gate is not None:
            self._gate.acquire()
        try:
            for attempt in range(self.retries + 1):
                try:
                    return self._run_once(
                        context, params, on_chunk, effective_max
                    )
                except _MidStreamFailure as exc:
                    raise ProviderError(str(exc.__cause__)) from exc.__cause__
                except ProviderError:
                    if attempt >= self.retries:
                        raise
                    self._sleep(self.backoff_base * (2**attempt))
            raise AssertionError("unreachable")
        finally:
            if self._gate is not None:
                self._gate.release()

    def _run_once(
        self,
        context: Context,
        params: GenParams,
        on_chunk: Callable[[str], None] | None,
        effective_max: int,
    ) -> GenOutcome:
        hold = max((len(s) for s in params.stop_sequences), default=1) - 1
        total = ""
        emitted = 0
        tokens = 0

        def flush(upto: int) -> None:
            nonlocal emitted
            if on_chunk is not None and upto > emitted:
                on_chunk(total[emitted:upto])
            emitted = max(emitted, upto)

        it = self.adapter.stream(context, params, effective_max)
        try:
            while True:
                try:
                    chunk = next(it)
                except StopIteration:
                    break
                except ProviderError as exc:
                    if tokens > 0:
                        raise _MidStreamFailure() from exc
                    raise
                tokens += 1
                prev_len = len(total)
                total += chunk
                hit_at, hit = -1, None
                for s in params.stop_sequences:
                    j = total.find(s, max(0, prev_len - len(s) + 1))
                    if j != -1 and (hit_at == -1 or j < hit_at):
                        hit_at, hit = j, s
                if hit is not None:
                    total = total[: hit_at + len(hit)]
                    flush(len(total))
                    return GenOutcome(
                        total, StopReason.STOP_SEQUENCE, hit, tokens
                    )
                if tokens >= effective_max:
                    flush(len(total))
                    return GenOutcome(total, StopReason.MAX_TOKENS, None, tokens)
                flush(len(total) - hold)
        finally:
            close = getattr(it, "close", None)
            if close is not None:
                close()
        flush(len(total))
        return GenOutcome(total, StopReason.END_OF_MESSAGE, None, tokens)


class _MidStreamFailure(Exception):
    """Wrapper so the retry loop can tell start-up failures (retryable)
    from failures after chunks were already consumed (terminal)."""


class ScriptExhausted(Exception):
    """The scripted model received more calls than it has steps."""


class PredicateFailed(AssertionError):
    """A scripted step's context expectation did not hold."""


@dataclass
class ScriptedStep:
    """One scripted response: yield ``output`` (a string delivered in
    ``chunk_size`` pieces, or an explicit chunk list), then raise
    ``error`` if set. ``expect`` is an optional predicate asserted
    against the received context before the step plays."""

    output: str | list[str] = ""
    chunk_size: int | None = None
    error: Exception | None = None
    expect: Callable[[Context], bool] | None = None


@dataclass
class CallRecord:
    context: tuple[Message, ...]
    params: GenParams
    max_tokens: int


class ScriptedModel:
    """Adapter whose outputs come from a script; drives tests and
    offline runs.

    Responses come from ``steps`` (consumed in order) and then from
    ``responder(context)`` once steps run out. Every call is appended
    to ``calls``; stream start/finish are appended to ``events`` as
    ``(phase, label)`` pairs with the label derived from the context,
    which lets tests assert scheduling order across threads.
    """

    def __init__(
        self,
        steps: Iterable[ScriptedStep | str | list[str] | Exception] = (),
        *,
        responder: Callable[[Context], ScriptedStep | str | list[str]] | None = None,
        chunk_size: int = 8,
        label_fn: Callable[[Context], str] | None = None,
    ) -> None:
        self._steps = [self._norm(s) for s in steps]
        self._responder = responder
        self.chunk_size = chunk_size
        self._label_fn = label_fn or _default_label
        self._lock = threading.Lock()
        self.calls: list[CallRecord] = []
        self.events: list[tuple[str, str]] = []

    @staticmethod
    def _norm(step) -> ScriptedStep:
        if isinstance(step, ScriptedStep):
            return step
        if isinstance(step, Exception):
            return ScriptedStep(error=step)
        return ScriptedStep(output=step)

    @classmethod
    def from_file(cls, path: str) -> "ScriptedModel":
        """Load a JSON script: ``{"steps": [...], "chunk_size": 8,
        "default": "..."}``. A step is a string or an object with
        ``output`` and optional ``chunk_size``. When steps run out the
        ``default`` string (if given) answers every further call."""
        with open(path, encoding="utf-8") as f:
            spec = json.load(f)
        steps: list[ScriptedStep] = []
        for raw in spec.get("steps", []):
            if isinstance(raw, str):
                steps.append(ScriptedStep(output=raw))
            else:
                steps.append(
                    ScriptedStep(
                        output=raw.get("output", ""),
                        chunk_size=raw.get("chunk_size"),
                    )
                )
        default = spec.get("default")
        responder = None
        if default is not None:
            responder = lambda context: default  # noqa: E731
        return cls(
            steps,
            responder=responder,
            chunk_size=spec.get("chunk_size", 8),
        )

    def stream(
        self, context: Context, params: GenParams, max_tokens: int
    ) -> Iterator[str]:
        with self._lock:
            self.calls.append(CallRecord(tuple(context), params, max_tokens))
            label = self._label_fn(context)
            self.events.append(("start", label))
            if self._steps:
                step = self._steps.pop(0)
            elif self._responder is not None:
                step = self._norm(self._responder(context))
            else:
                raise ScriptExhausted(
                    f"no step for call #{len(self.calls)}"
                )
        if step.expect is not None and not step.expect(context):
            raise PredicateFailed(
                "context did not satisfy the step's expectation; got roles "
                + " -> ".join(f"{m.role}:{m.content[:60]!r}" for m in context)
            )
        return self._play(step, label)

    def _play(self, step: ScriptedStep, label: str) -> Iterator[str]:
        try:
            if isinstance(step.output, list):
                chunks = list(step.output)
            else:
                size = step.chunk_size or self.chunk_size
                chunks = [
                    step.output[i : i + size]
                    for i in range(0, len(step.output), size)
                ]
            yield from chunks
            if step.error is not None:
                raise step.error
        finally:
            with self._lock:
                self.events.append(("finish", label))


def _default_label(context: Context) -> str:
    for msg in context:
        if msg.role == "system":
            return msg.content.splitlines()[0][:60] if msg.content else ""
    return ""


class OpenAIChatAdapter:
    """Streams from an OpenAI-compatible chat-completions endpoint.

    Stop sequences are not forwarded: the gateway needs the stop text
    included in the output, and chat APIs strip it, so detection stays
    client-side. ``transport`` is injectable for tests; the default
    POSTs with ``requests`` and yields SSE ``data:`` payloads.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        *,
        api_key_env: str = "LLM_API_KEY",
        timeout: float = 300.0,
        transport: Callable[[str, dict, dict], Iterator[str]] | None = None,
    ) -> None:
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self._transport = transport or self._http_transport

    def stream(
        self, context: Context, params: GenParams, max_tokens: int
    ) -> Iterator[str]:
        payload = {
            "model": self.model,
            "messages": [
                {"role": m.role, "content": m.content} for m in context
            ],
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": max_tokens,
            "stream": True,
        }
        if context and context[-1].role == "assistant":
            # Continuation prefill: ask the server to extend the final
            # assistant message instead of starting a fresh turn.
            payload["continue_final_message"] = True
            payload["add_generation_prompt"] = False
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        url = f"{self.endpoint}/chat/completions"
        for data in self._transport(url, headers, payload):
            if data == "[DONE]":
                break
            try:
                obj = json.loads(data)
            except json.JSONDecodeError as exc:
                raise ProviderError(f"bad SSE payload: {data[:80]!r}") from exc
            for choice in obj.get("choices", []):
                piece = (choice.get("delta") or {}).get("content")
                if piece:
                    yield piece

    def _http_transport(
        self, url: str, headers: dict, payload: dict
    ) -> Iterator[str]:
        import requests

        try:
            resp = requests.post(
                url,
                headers=headers,
                json=payload,
                stream=True,
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise ProviderError(f"request failed: {exc}") from exc
        if resp.status_code != 200:
            raise ProviderError(
                f"provider returned {resp.status_code}: {resp.text[:200]}"
            )
        with resp:
            for line in resp.iter_lines(decode_unicode=True):
                if line and line.startswith("data:"):
                    yield line[len("data:") :].strip()
