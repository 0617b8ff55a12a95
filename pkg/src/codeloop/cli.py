"""Command-line entry points.

Model access is configured with a small JSON file passed as
``--provider``: ``{"type": "openai_chat", "endpoint": ..., "model":
..., "api_key_env": "LLM_API_KEY"}`` for a live endpoint, or
``{"type": "scripted", "script": "replies.json"}`` for offline runs
driven by a scripted model. Without the flag, LLM_ENDPOINT and
LLM_MODEL are read from the environment.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import click

from .gateway import Gateway, OpenAIChatAdapter, ScriptedModel
from .harness import (
    DuplicateId,
    SchemaError,
    load_dataset,
    run_ablation,
    run_benchmark,
)
from .reporting import write_report
from .runtime import AgentConfig, run_trace
from .sandbox import ExecutorProcess
from .segmenting import segment
from .tools.service import ServiceConfig, serve
from .workflow import (
    EngineDeps,
    StageFailure,
    WorkflowConfig,
    default_role_prompts,
    run_workflow,
)


def _build_gateway(path: str | None, *, default_key_env: str = "LLM_API_KEY") -> Gateway:
    if path is None:
        endpoint = os.environ.get("LLM_ENDPOINT")
        model = os.environ.get("LLM_MODEL")
        if not endpoint or not model:
            raise click.UsageError(
                "no model configured: pass --provider CONFIG.json or set "
                "LLM_ENDPOINT and LLM_MODEL"
            )
        return Gateway(OpenAIChatAdapter(endpoint, model, api_key_env=default_key_env))
    spec = json.loads(Path(path).read_text("utf-8"))
    kind = spec.get("type", "openai_chat")
    if kind == "scripted":
        script = spec.get("script")
        if not script:
            raise click.UsageError("scripted provider config needs a 'script' path")
        return Gateway(ScriptedModel.from_file(str(Path(path).parent / script)))
    if kind == "openai_chat":
        for key in ("endpoint", "model"):
            if not spec.get(key):
                raise click.UsageError(f"provider config is missing {key!r}")
        adapter = OpenAIChatAdapter(
            spec["endpoint"],
            spec["model"],
            api_key_env=spec.get("api_key_env", default_key_env),
        )
        return Gateway(adapter, max_in_flight=spec.get("max_in_flight"))
    raise click.UsageError(f"unknown provider type {kind!r}")


class _SandboxScope:
    """Owns the optional executor process behind a session factory."""

    def __init__(self, kind: str, tool_service_url: str | None) -> None:
        self._proc = None
        if kind == "executor":
            url = tool_service_url or os.environ.get("TOOL_SERVICE_URL")
            self._proc = ExecutorProcess(tool_service_url=url)

    def factory(self):
        if self._proc is None:
            return None
        return self._proc.open_session()

    def __enter__(self) -> "_SandboxScope":
        return self

    def __exit__(self, *exc) -> None:
        if self._proc is not None:
            self._proc.shutdown()


provider_option = click.option(
    "--provider",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="JSON model config; defaults to LLM_ENDPOINT/LLM_MODEL.",
)
sandbox_option = click.option(
    "--sandbox",
    type=click.Choice(["none", "executor"]),
    default="none",
    show_default=True,
    help="Where <code> blocks run; 'executor' spawns the external executor.",
)
tool_url_option = click.option(
    "--tool-service-url",
    default=None,
    help="Tool service endpoint for the executor (default: TOOL_SERVICE_URL).",
)


@click.group()
def main() -> None:
    """Tool-augmented reasoning agent and its evaluation harness."""


@main.group()
def trace() -> None:
    """Inspect recorded or raw model streams."""


@trace.command("segment")
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
def trace_segment(file: str) -> None:
    """Split a raw stream into segments, one JSON object per line."""
    text = Path(file).read_text("utf-8")
    for seg in segment(text):
        click.echo(json.dumps(seg.to_dict(), ensure_ascii=False))


@main.command()
@click.option("--query", required=True, help="Question to answer.")
@click.option(
    "--role",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="Role prompt file (default: the built-in solver prompt).",
)
@click.option(
    "--trace-out",
    type=click.Path(dir_okay=False),
    default=None,
    help="Write the full trace as JSON to this path.",
)
@provider_option
@sandbox_option
@tool_url_option
def solve(query, role, trace_out, provider, sandbox, tool_service_url) -> None:
    """Run one agent trace and print the final answer."""
    gateway = _build_gateway(provider)
    role_prompt = (
        Path(role).read_text("utf-8") if role else default_role_prompts()["solver"]
    )
    with _SandboxScope(sandbox, tool_service_url) as scope:
        session = scope.factory()
        try:
            result = run_trace(query, role_prompt, gateway, session, AgentConfig())
        finally:
            if session is not None:
                session.close()
    if trace_out:
        Path(trace_out).write_text(
            json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n", "utf-8"
        )
    if result.answer is None:
        raise click.ClickException(
            f"no answer produced (termination: {result.termination.value})"
        )
    click.echo(result.answer)


@main.group()
def tools() -> None:
    """Web tool service."""


def _serve_wait(handle) -> None:
    handle.thread.join()


@tools.command("serve")
@click.option("--port", default=8765, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option(
    "--replay",
    type=click.Path(exists=True, file_okay=False),
    default=None,
    help="Serve recorded fixtures from this directory; no network.",
)
@click.option(
    "--record",
    type=click.Path(file_okay=False),
    default=None,
    help="Serve live and record every response into this directory.",
)
def tools_serve(port, host, replay, record) -> None:
    """Serve the search and parse endpoints over HTTP."""
    if replay and record:
        raise click.UsageError("--replay and --record are mutually exclusive")
    mode = "replay" if replay else "record" if record else "live"
    config = ServiceConfig(
        port=port, host=host, mode=mode, fixture_dir=replay or record
    )
    with serve(config) as handle:
        click.echo(f"tool service listening on {handle.base_url} ({mode} mode)")
        try:
            _serve_wait(handle)
        except KeyboardInterrupt:
            click.echo("shutting down")


def _workflow_config(n_parallel, no_scatter, no_stack) -> WorkflowConfig:
    return WorkflowConfig(
        n_parallel=n_parallel, scatter=not no_scatter, stack=not no_stack
    )


@main.group()
def workflow() -> None:
    """Scattered and stacked multi-agent runs."""


@workflow.command("run")
@click.option("--query", required=True, help="Question to answer.")
@click.option("--no-scatter", is_flag=True, help="Single solution path.")
@click.option("--no-stack", is_flag=True, help="Stop after the critic stage.")
@click.option("--n", "n_parallel", default=5, show_default=True)
@click.option(
    "--out",
    "out_dir",
    required=True,
    type=click.Path(file_okay=False),
    help="Directory for run.json and per-stage traces.",
)
@provider_option
@sandbox_option
@tool_url_option
def workflow_run(
    query, no_scatter, no_stack, n_parallel, out_dir, provider, sandbox,
    tool_service_url,
) -> None:
    """Run the full workflow once and print the final answer."""
    gateway = _build_gateway(provider)
    config = _workflow_config(n_parallel, no_scatter, no_stack)
    with _SandboxScope(sandbox, tool_service_url) as scope:
        deps = EngineDeps(gateway=gateway, sandbox_factory=scope.factory)
        try:
            run = run_workflow(query, deps, config, out_dir=out_dir)
        except StageFailure as exc:
            raise click.ClickException(str(exc))
    click.echo(run.final_answer or "")


@main.command()
@click.option(
    "--dataset",
    required=True,
    type=click.Path(exists=True, dir_okay=False),
    help="JSONL file of benchmark questions.",
)
@click.option("--runs", default=3, show_default=True)
@click.option(
    "--out",
    "out_dir",
    required=True,
    type=click.Path(file_okay=False),
    help="Directory for checkpoints, report files, and figures.",
)
@click.option("--no-scatter", is_flag=True)
@click.option("--no-stack", is_flag=True)
@click.option("--n", "n_parallel", default=5, show_default=True)
@click.option(
    "--judge",
    "judge_mode",
    type=click.Choice(["model", "exact"]),
    default="exact",
    show_default=True,
)
@click.option(
    "--judge-provider",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="Model config for the judge (required with --judge model).",
)
@click.option("--concurrency", default=4, show_default=True)
@click.option(
    "--ablation",
    is_flag=True,
    help="Also benchmark the scatter/stack combinations into subdirectories.",
)
@provider_option
@sandbox_option
@tool_url_option
def bench(
    dataset, runs, out_dir, no_scatter, no_stack, n_parallel, judge_mode,
    judge_provider, concurrency, ablation, provider, sandbox, tool_service_url,
) -> None:
    """Benchmark the workflow over a dataset and render the report."""
    try:
        records = load_dataset(dataset)
    except (SchemaError, DuplicateId, OSError) as exc:
        raise click.ClickException(f"bad dataset: {exc}")
    judge_gateway = None
    if judge_mode == "model":
        judge_gateway = _build_gateway(
            judge_provider, default_key_env="JUDGE_API_KEY"
        )
    gateway = _build_gateway(provider)
    config = _workflow_config(n_parallel, no_scatter, no_stack)
    with _SandboxScope(sandbox, tool_service_url) as scope:
        deps = EngineDeps(gateway=gateway, sandbox_factory=scope.factory)
        report = run_benchmark(
            records,
            deps,
            config,
            runs=runs,
            out_dir=out_dir,
            judge_mode=judge_mode,
            judge_gateway=judge_gateway,
            concurrency=concurrency,
        )
        grid = None
        if ablation:
            grid = run_ablation(
                records,
                lambda: deps,
                config,
                runs=runs,
                out_dir=Path(out_dir) / "ablation",
                judge_mode=judge_mode,
                judge_gateway=judge_gateway,
                concurrency=concurrency,
            )
    written = write_report(report, out_dir, ablation=grid)
    click.echo(f"questions: {report.question_count}  runs: {report.runs}")
    overall = report.overall_accuracy
    click.echo(
        "overall accuracy: "
        + ("n/a" if overall is None else f"{overall:.1f}%")
    )
    for warning in report.warnings:
        click.echo(f"warning: {warning}", err=True)
    click.echo(f"report written to {out_dir} ({len(written)} files)")


if __name__ == "__main__":
    main()
