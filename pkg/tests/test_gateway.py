"""Gateway behavior: stop scanning, token caps, retries, adapters."""

from __future__ import annotations

import random

import pytest

from codeloop.gateway import (
    CallRecord,
    Gateway,
    PredicateFailed,
    ScriptExhausted,
    GenParams,
    Message,
    OpenAIChatAdapter,
    ProviderError,
    ScriptedModel,
    ScriptedStep,
    StopReason,
)

CTX = [Message("user", "q")]


def gw(model, **kw):
    kw.setdefault("sleep", lambda s: None)
    return Gateway(model, **kw)


class TestDefaults:
    def test_sampling_defaults(self):
        p = GenParams()
        assert p.temperature == 0.6
        assert p.top_p == 0.95
        assert p.max_new_tokens == 65536
        assert p.stop_sequences == ()
        assert p.seed is None


class TestStopSequences:
    def test_stop_included_and_tail_dropped(self):
        model = ScriptedModel([["ab", "</co", "de>xyz", "never"]])
        out = gw(model).generate_stream(CTX, GenParams(stop_sequences=("</code>",)))
        assert out.text == "ab</code>"
        assert out.stop_reason is StopReason.STOP_SEQUENCE
        assert out.stop_sequence == "</code>"

    def test_stop_detection_is_chunking_invariant(self):
        full = "x = 1\nprint(x)</code> trailing text that must be cut"
        rng = random.Random(3)
        results = []
        for _ in range(30):
            chunks, i = [], 0
            while i < len(full):
                k = rng.randrange(1, 9)
                chunks.append(full[i : i + k])
                i += k
            model = ScriptedModel([chunks])
            seen = []
            out = gw(model).generate_stream(
                CTX, GenParams(stop_sequences=("</code>",)), seen.append
            )
            assert "".join(seen) == out.text
            results.append((out.text, out.stop_reason))
        assert len(set(results)) == 1
        assert results[0] == (
            "x = 1\nprint(x)</code>",
            StopReason.STOP_SEQUENCE,
        )

    def test_on_chunk_never_sees_text_past_the_stop(self):
        model = ScriptedModel([["abc</code", ">SECRET"]])
        seen = []
        gw(model).generate_stream(CTX, GenParams(stop_sequences=("</code>",)), seen.append)
        assert "SECRET" not in "".join(seen)

    def test_earliest_stop_wins(self):
        model = ScriptedModel([["a THEN b STOP"]])
        out = gw(model).generate_stream(
            CTX, GenParams(stop_sequences=("STOP", "THEN"))
        )
        assert out.text == "a THEN"
        assert out.stop_sequence == "THEN"

    def test_literal_partial_stop_is_kept(self):
        model = ScriptedModel([["half </co", "nfig done"]])
        seen = []
        out = gw(model).generate_stream(
            CTX, GenParams(stop_sequences=("</code>",)), seen.append
        )
        assert out.text == "half </config done"
        assert out.stop_reason is StopReason.END_OF_MESSAGE
        assert "".join(seen) == out.text


class TestTokenAccounting:
    def test_length_cap_counts_chunks(self):
        model = ScriptedModel([[f"t{i} " for i in range(10)]])
        out = gw(model).generate_stream(
            CTX, GenParams(max_new_tokens=5)
        )
        assert out.tokens_generated == 5
        assert out.text == "t0 t1 t2 t3 t4 "
        assert out.stop_reason is StopReason.MAX_TOKENS

    def test_cap_argument_tightens_without_touching_params(self):
        model = ScriptedModel([[f"t{i}" for i in range(10)]])
        params = GenParams()
        out = gw(model).generate_stream(CTX, params, max_tokens_cap=3)
        assert out.tokens_generated == 3
        assert params.max_new_tokens == 65536
        assert model.calls[0].max_tokens == 3

    def test_natural_end(self):
        model = ScriptedModel(["short answer"])
        out = gw(model).generate_stream(CTX, GenParams())
        assert out.stop_reason is StopReason.END_OF_MESSAGE
        assert out.text == "short answer"

    def test_stop_beats_length_on_same_chunk(self):
        model = ScriptedModel([["a", "b</code>c"]])
        out = gw(model).generate_stream(
            CTX, GenParams(max_new_tokens=2, stop_sequences=("</code>",))
        )
        assert out.stop_reason is StopReason.STOP_SEQUENCE
        assert out.text == "ab</code>"


class TestRetries:
    def test_startup_failures_retry_with_backoff(self):
        delays = []
        model = ScriptedModel(
            [ProviderError("down"), ProviderError("still down"), "ok"]
        )
        out = Gateway(model, sleep=delays.append).generate_stream(
            CTX, GenParams()
        )
        assert out.text == "ok"
        assert delays == [1.0, 2.0]

    def test_retries_exhaust(self):
        delays = []
        model = ScriptedModel([ProviderError(f"e{i}") for i in range(4)])
        with pytest.raises(ProviderError, match="e3"):
            Gateway(model, sleep=delays.append).generate_stream(
                CTX, GenParams()
            )
        assert delays == [1.0, 2.0, 4.0]

    def test_mid_stream_failure_is_terminal(self):
        delays = []
        model = ScriptedModel(
            [ScriptedStep(output="part", error=ProviderError("cut")), "spare"]
        )
        with pytest.raises(ProviderError, match="cut"):
            Gateway(model, sleep=delays.append).generate_stream(
                CTX, GenParams()
            )
        assert delays == []
        assert len(model.calls) == 1


class TestScriptedModel:
    def test_records_calls_and_events(self):
        model = ScriptedModel(["a", "b"], label_fn=lambda c: c[-1].content)
        g = gw(model)
        g.generate_stream([Message("user", "one")], GenParams())
        g.generate_stream([Message("user", "two")], GenParams())
        assert [c.context[-1].content for c in model.calls] == ["one", "two"]
        assert model.events == [
            ("start", "one"),
            ("finish", "one"),
            ("start", "two"),
            ("finish", "two"),
        ]

    def test_exhausted_script_fails(self):
        model = ScriptedModel(["only"])
        g = gw(model)
        g.generate_stream(CTX, GenParams())
        with pytest.raises(ScriptExhausted):
            g.generate_stream(CTX, GenParams())

    def test_step_predicate_asserts_context(self):
        model = ScriptedModel(
            [
                ScriptedStep(
                    output="ok",
                    expect=lambda ctx: "magic" in ctx[-1].content,
                )
            ]
        )
        with pytest.raises(PredicateFailed):
            gw(model).generate_stream([Message("user", "plain")], GenParams())
        model2 = ScriptedModel(
            [
                ScriptedStep(
                    output="ok",
                    expect=lambda ctx: "magic" in ctx[-1].content,
                )
            ]
        )
        out = gw(model2).generate_stream(
            [Message("user", "some magic here")], GenParams()
        )
        assert out.text == "ok"

    def test_max_in_flight_bounds_concurrency(self):
        import threading

        active, peak, lock = 0, 0, threading.Lock()

        def responder(ctx):
            nonlocal active, peak
            with lock:
                active += 1
                peak = max(peak, active)
            try:
                import time

                time.sleep(0.01)
                return "x"
            finally:
                with lock:
                    active -= 1

        model = ScriptedModel(responder=responder)
        g = Gateway(model, max_in_flight=2, sleep=lambda s: None)
        threads = [
            threading.Thread(
                target=g.generate_stream, args=(CTX, GenParams())
            )
            for _ in range(8)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert peak <= 2

    def test_responder_serves_after_steps(self):
        model = ScriptedModel(
            ["first"], responder=lambda ctx: f"echo:{ctx[-1].content}"
        )
        g = gw(model)
        assert g.generate_stream(CTX, GenParams()).text == "first"
        assert g.generate_stream(CTX, GenParams()).text == "echo:q"

    def test_from_file(self, tmp_path):
        path = tmp_path / "script.json"
        path.write_text(
            '{"steps": ["s1", {"output": "s2", "chunk_size": 1}],'
            ' "default": "fallback"}'
        )
        model = ScriptedModel.from_file(str(path))
        g = gw(model)
        assert g.generate_stream(CTX, GenParams()).text == "s1"
        out2 = g.generate_stream(CTX, GenParams())
        assert out2.text == "s2"
        assert out2.tokens_generated == 2
        assert g.generate_stream(CTX, GenParams()).text == "fallback"


class TestOpenAIChatAdapter:
    def make(self, lines, calls):
        def transport(url, headers, payload):
            calls.append((url, headers, payload))
            return iter(lines)

        return OpenAIChatAdapter(
            "http://llm.test/v1", "test-model", transport=transport
        )

    def sse(self, *pieces):
        lines = [
            '{"choices": [{"delta": {"content": "%s"}}]}' % p for p in pieces
        ]
        return lines + ["[DONE]"]

    def test_payload_and_chunks(self):
        calls = []
        adapter = self.make(self.sse("he", "llo"), calls)
        out = gw(adapter).generate_stream(
            [Message("system", "s"), Message("user", "u")],
            GenParams(temperature=0.6),
        )
        assert out.text == "hello"
        url, headers, payload = calls[0]
        assert url == "http://llm.test/v1/chat/completions"
        assert payload["model"] == "test-model"
        assert payload["temperature"] == 0.6
        assert payload["max_tokens"] == 65536
        assert payload["stream"] is True
        assert payload["messages"] == [
            {"role": "system", "content": "s"},
            {"role": "user", "content": "u"},
        ]
        assert "continue_final_message" not in payload

    def test_assistant_tail_requests_continuation(self):
        calls = []
        adapter = self.make(self.sse("x"), calls)
        gw(adapter).generate_stream(
            [Message("user", "u"), Message("assistant", "<think>")],
            GenParams(),
        )
        payload = calls[0][2]
        assert payload["continue_final_message"] is True
        assert payload["add_generation_prompt"] is False

    def test_bad_sse_payload_raises(self):
        adapter = self.make(["not json"], [])
        with pytest.raises(ProviderError, match="bad SSE"):
            gw(adapter, retries=0).generate_stream(CTX, GenParams())

    def test_api_key_header(self, monkeypatch):
        monkeypatch.setenv("LLM_API_KEY", "sk-test")
        calls = []
        adapter = self.make(self.sse("x"), calls)
        gw(adapter).generate_stream(CTX, GenParams())
        assert calls[0][1]["Authorization"] == "Bearer sk-test"
