"""Session and SessionManager behavior: persistence, isolation, echo,
output capture, timeouts, caps, and lifecycle errors."""

from __future__ import annotations

import threading
import time

import pytest

from codeloop_executor import (
    DuplicateSession,
    ExecStatus,
    Session,
    SessionManager,
    UnknownSession,
)


def make_session(sid: str = "s", **kwargs) -> Session:
    return Session(sid, **kwargs)


class TestNamespace:
    def test_assignments_persist_across_executions(self):
        s = make_session()
        assert s.execute("x = 1").status is ExecStatus.SUCCESS
        r = s.execute("print(x)")
        assert r.status is ExecStatus.SUCCESS
        assert r.stdout == "1\n"

    def test_imports_and_functions_persist(self):
        s = make_session()
        s.execute("import math\ndef area(r):\n    return math.pi * r * r")
        r = s.execute("round(area(1), 4)")
        assert r.stdout == "3.1416\n"

    def test_sessions_do_not_share_state(self):
        a = make_session("a")
        b = make_session("b")
        a.execute("secret = 99")
        r = b.execute("secret")
        assert r.status is ExecStatus.EXCEPTION_RAISED
        assert "NameError" in r.stderr

    def test_empty_session_id_rejected(self):
        with pytest.raises(ValueError):
            Session("")


class TestEcho:
    def test_bare_final_expression_echoes_repr(self):
        s = make_session()
        r = s.execute("2 + 2")
        assert r.stdout == "4\n"

    def test_string_expression_echoes_quoted(self):
        r = make_session().execute("'hi'")
        assert r.stdout == "'hi'\n"

    def test_statements_before_final_expression_run_first(self):
        r = make_session().execute("x = 6\ny = 7\nx * y")
        assert r.stdout == "42\n"

    def test_none_result_is_not_echoed(self):
        r = make_session().execute("None")
        assert r.stdout == ""

    def test_assignment_is_not_echoed(self):
        r = make_session().execute("x = 5")
        assert r.stdout == ""

    def test_explicit_print_of_none_still_shows(self):
        r = make_session().execute("print(None)")
        assert r.stdout == "None\n"


class TestOutput:
    def test_print_goes_to_stdout(self):
        r = make_session().execute("print('hello')")
        assert r.stdout == "hello\n"
        assert r.stderr == ""

    def test_stderr_writes_are_captured_separately(self):
        r = make_session().execute(
            "import sys\nsys.stderr.write('warn\\n')\nprint('ok')"
        )
        assert r.status is ExecStatus.SUCCESS
        assert r.stdout == "ok\n"
        assert r.stderr == "warn\n"

    def test_success_never_carries_a_traceback(self):
        r = make_session().execute(
            "import sys\nsys.stderr.write('just a note\\n')\n1 + 1"
        )
        assert r.status is ExecStatus.SUCCESS
        assert "Traceback" not in r.stderr

    def test_output_capped_with_truncation_marker(self):
        s = Session("cap", output_cap=200)
        r = s.execute("print('x' * 1000)")
        assert r.status is ExecStatus.SUCCESS
        assert "[output truncated at 200 bytes]" in r.stdout
        assert len(r.stdout) < 300

    def test_cap_applies_per_execution_not_per_session(self):
        s = Session("cap", output_cap=200)
        s.execute("print('x' * 1000)")
        r = s.execute("print('short')")
        assert r.stdout == "short\n"

    def test_concurrent_sessions_do_not_mix_output(self):
        a = make_session("a")
        b = make_session("b")
        results: dict[str, str] = {}

        def run(session, tag):
            r = session.execute(
                f"for _ in range(200):\n    print('{tag}')"
            )
            results[tag] = r.stdout

        ta = threading.Thread(target=run, args=(a, "aaa"))
        tb = threading.Thread(target=run, args=(b, "bbb"))
        ta.start(), tb.start()
        ta.join(), tb.join()
        assert results["aaa"] == "aaa\n" * 200
        assert results["bbb"] == "bbb\n" * 200


class TestFailures:
    def test_exception_reports_status_and_traceback(self):
        r = make_session().execute("1 / 0")
        assert r.status is ExecStatus.EXCEPTION_RAISED
        assert "ZeroDivisionError" in r.stderr
        assert "Traceback" in r.stderr

    def test_partial_output_survives_an_exception(self):
        r = make_session().execute("print('before')\nboom")
        assert r.status is ExecStatus.EXCEPTION_RAISED
        assert r.stdout == "before\n"

    def test_syntax_error_reported_as_exception(self):
        r = make_session().execute("def broken(:")
        assert r.status is ExecStatus.EXCEPTION_RAISED
        assert "SyntaxError" in r.stderr

    def test_namespace_survives_an_exception(self):
        s = make_session()
        s.execute("x = 10")
        s.execute("1 / 0")
        r = s.execute("x")
        assert r.stdout == "10\n"
        assert r.namespace_preserved is True


class TestTimeout:
    def test_timeout_status_and_elapsed_at_least_deadline(self):
        s = make_session()
        r = s.execute("while True:\n    pass", timeout_ms=500)
        assert r.status is ExecStatus.TIMEOUT
        assert r.elapsed_ms >= 500
        assert r.namespace_preserved is False

    def test_timeout_resets_the_namespace(self):
        s = make_session()
        s.execute("x = 1")
        s.execute("while True:\n    pass", timeout_ms=300)
        r = s.execute("x")
        assert r.status is ExecStatus.EXCEPTION_RAISED
        assert "NameError" in r.stderr

    def test_session_usable_after_timeout(self):
        s = make_session()
        s.execute("while True:\n    pass", timeout_ms=300)
        r = s.execute("'back'")
        assert r.status is ExecStatus.SUCCESS
        assert r.stdout == "'back'\n"

    def test_bindings_restored_after_timeout_reset(self):
        s = Session("t", bindings={"answer": lambda: 42})
        s.execute("while True:\n    pass", timeout_ms=300)
        r = s.execute("answer()")
        assert r.stdout == "42\n"

    def test_nonpositive_timeout_rejected(self):
        with pytest.raises(ValueError):
            make_session().execute("1", timeout_ms=0)

    def test_fast_code_unaffected_by_timeout(self):
        r = make_session().execute("'quick'", timeout_ms=500)
        assert r.status is ExecStatus.SUCCESS
        assert r.namespace_preserved is True


class TestSerialization:
    def test_executions_on_one_session_are_serialized(self):
        s = make_session()
        s.execute("log = []")

        def run(tag):
            s.execute(
                f"log.append('{tag}/start')\n"
                "import time\n"
                "time.sleep(0.05)\n"
                f"log.append('{tag}/end')"
            )

        threads = [threading.Thread(target=run, args=(t,)) for t in ("p", "q")]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        r = s.execute("print('|'.join(log))")
        entries = r.stdout.strip().split("|")
        assert len(entries) == 4
        # Each execution's start/end pair is adjacent: no interleaving.
        assert entries[0].split("/")[0] == entries[1].split("/")[0]
        assert entries[2].split("/")[0] == entries[3].split("/")[0]


class TestBindings:
    def test_bindings_are_visible_in_the_namespace(self):
        s = Session("t", bindings={"double": lambda n: n * 2})
        r = s.execute("double(21)")
        assert r.stdout == "42\n"

    def test_manager_injects_bindings_into_every_session(self):
        m = SessionManager(bindings_factory=lambda: {"greet": lambda: "yo"})
        m.open("s1")
        r = m.execute("s1", "greet()")
        assert r.stdout == "'yo'\n"


class TestManager:
    def test_open_execute_close_lifecycle(self):
        m = SessionManager(bindings_factory=dict)
        m.open("s1")
        assert len(m) == 1
        assert m.execute("s1", "1 + 1").stdout == "2\n"
        m.close("s1")
        assert len(m) == 0

    def test_duplicate_open_rejected(self):
        m = SessionManager(bindings_factory=dict)
        m.open("s1")
        with pytest.raises(DuplicateSession):
            m.open("s1")

    def test_execute_on_unknown_session_rejected(self):
        m = SessionManager(bindings_factory=dict)
        with pytest.raises(UnknownSession):
            m.execute("nope", "1")

    def test_close_on_unknown_session_rejected(self):
        m = SessionManager(bindings_factory=dict)
        with pytest.raises(UnknownSession):
            m.close("nope")

    def test_reopen_after_close_starts_fresh(self):
        m = SessionManager(bindings_factory=dict)
        m.open("s1")
        m.execute("s1", "x = 1")
        m.close("s1")
        m.open("s1")
        r = m.execute("s1", "x")
        assert r.status is ExecStatus.EXCEPTION_RAISED
        assert "NameError" in r.stderr

    def test_close_all_empties_the_manager(self):
        m = SessionManager(bindings_factory=dict)
        for i in range(5):
            m.open(f"s{i}")
        m.close_all()
        assert len(m) == 0

    def test_elapsed_ms_reflects_wall_time(self):
        m = SessionManager(bindings_factory=dict)
        m.open("s1")
        started = time.monotonic()
        r = m.execute("s1", "import time\ntime.sleep(0.2)")
        wall = (time.monotonic() - started) * 1000
        assert 150 <= r.elapsed_ms <= wall + 1
