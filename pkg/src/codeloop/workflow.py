"""Scattered-and-stacked multi-agent workflow.

Four staged roles run over the same tool-augmented agent runtime:
Solvers produce initial solutions in parallel, one Critic per solution
amends it, Rewriters each synthesize a new solution from all critiqued
ones, and a Selector picks the best rewrite. Stages are separated by
strict barriers; every generation call in a run shares one GenParams.

Scatter off collapses the parallel stages to a single trace each and
skips the Selector (choosing among one candidate is vacuous). Stack off
removes the Rewriter and Selector stages entirely; the critiqued
solutions are exported as the run's candidates.
"""

from __future__ import annotations

import json
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable

from .gateway import Gateway
from .runtime import AgentConfig, Trace, run_trace
from .sandbox import SandboxSession
from .tags import DEFAULT_TAGS, TagSet

ROLES = ("solver", "critic", "rewriter", "selector")

NO_SOLUTION = "(no solution was produced)"


class ArityMismatch(ValueError):
    pass


class StageFailure(RuntimeError):
    def __init__(self, stage: str, message: str, partial: "WorkflowRun") -> None:
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage
        self.partial = partial


def default_role_prompts() -> dict[str, str]:
    out = {}
    for role in ROLES:
        out[role] = (
            resources.files("codeloop.prompts")
            .joinpath(f"{role}.txt")
            .read_text(encoding="utf-8")
        )
    return out


@dataclass
class WorkflowConfig:
    n_parallel: int = 5
    scatter: bool = True
    stack: bool = True
    role_prompts: dict[str, str] = field(default_factory=default_role_prompts)
    agent: AgentConfig = field(default_factory=AgentConfig)

    def __post_init__(self) -> None:
        if self.n_parallel < 1:
            raise ValueError("n_parallel must be >= 1")
        missing = [r for r in ROLES if r not in self.role_prompts]
        if missing:
            raise ValueError(f"role_prompts missing roles: {missing}")

    @property
    def effective_n(self) -> int:
        return self.n_parallel if self.scatter else 1

    def snapshot(self) -> dict:
        return {
            "n_parallel": self.n_parallel,
            "scatter": self.scatter,
            "stack": self.stack,
            "effective_n": self.effective_n,
            "gen_params": {
                "temperature": self.agent.gen_params.temperature,
                "top_p": self.agent.gen_params.top_p,
                "max_new_tokens": self.agent.gen_params.max_new_tokens,
                "seed": self.agent.gen_params.seed,
            },
            "max_interactions": self.agent.max_interactions,
        }


@dataclass
class EngineDeps:
    gateway: Gateway
    # one fresh sandbox session per agent run; None runs tool-less
    sandbox_factory: Callable[[], SandboxSession | None] = lambda: None
    tags: TagSet = DEFAULT_TAGS


@dataclass
class WorkflowRun:
    query: str
    solver_traces: list[Trace] = field(default_factory=list)
    critic_traces: list[Trace] = field(default_factory=list)
    rewriter_traces: list[Trace] = field(default_factory=list)
    selector_trace: Trace | None = None
    final_answer: str = ""
    candidate_answers: list[str] = field(default_factory=list)
    selected_index: int | None = None
    stage_timings: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "final_answer": self.final_answer,
            "candidate_answers": self.candidate_answers,
            "selected_index": self.selected_index,
            "stage_timings": self.stage_timings,
            "config": self.config,
            "flags": self.flags,
            "counts": {
                "solver": len(self.solver_traces),
                "critic": len(self.critic_traces),
                "rewriter": len(self.rewriter_traces),
                "selector": 1 if self.selector_trace else 0,
            },
        }


def _label_candidates(solutions: list[str]) -> str:
    blocks = []
    for i, text in enumerate(solutions, start=1):
        blocks.append(f"Solution {i}:\n{text}")
    return "\n\n".join(blocks)


def build_role_prompt(
    role: str,
    solutions: list[str] | tuple[str, ...] = (),
    *,
    templates: dict[str, str] | None = None,
) -> str:
    """Instantiate a role template. Arity: Solver takes no solutions,
    Critic exactly one, Rewriter and Selector one or more."""
    if role not in ROLES:
        raise ArityMismatch(f"unknown role {role!r}")
    solutions = list(solutions)
    templates = templates or default_role_prompts()
    template = templates[role]
    if role == "solver":
        if solutions:
            raise ArityMismatch("solver takes no input solutions")
        return template
    if role == "critic":
        if len(solutions) != 1:
            raise ArityMismatch(
                f"critic takes exactly one solution, got {len(solutions)}"
            )
        return template.format(solution=solutions[0])
    if not solutions:
        raise ArityMismatch(f"{role} needs at least one solution")
    return template.format(
        n=len(solutions), candidates=_label_candidates(solutions)
    )


_INT = re.compile(r"\d+")


def parse_selection(answer_text: str, n_candidates: int) -> tuple[int, bool]:
    """Chosen 1-based index from the selector's answer: the last
    in-range integer wins; none found falls back to 1 with a flag."""
    if n_candidates < 1:
        raise ValueError("n_candidates must be >= 1")
    choice = None
    for m in _INT.finditer(answer_text or ""):
        value = int(m.group())
        if 1 <= value <= n_candidates:
            choice = value
    if choice is None:
        return 1, True
    return choice, False


def _answers(traces: list[Trace]) -> list[str]:
    return [t.answer if t.answer else NO_SOLUTION for t in traces]


def run_workflow(
    query: str,
    deps: EngineDeps,
    config: WorkflowConfig | None = None,
    *,
    out_dir: str | Path | None = None,
    clock=time.monotonic,
) -> WorkflowRun:
    """Run the four-stage workflow for one query."""
    config = config or WorkflowConfig()
    n = config.effective_n
    run = WorkflowRun(query=query, config=config.snapshot())

    def one_trace(role_prompt: str) -> Trace:
        session = deps.sandbox_factory()
        try:
            return run_trace(
                query,
                role_prompt,
                deps.gateway,
                session,
                config.agent,
                tags=deps.tags,
                clock=clock,
            )
        finally:
            if session is not None:
                session.close()

    def stage(name: str, prompts: list[str], attach) -> list[Trace]:
        t0 = clock()
        if len(prompts) == 1:
            traces = [one_trace(prompts[0])]
        else:
            with ThreadPoolExecutor(max_workers=len(prompts)) as pool:
                traces = list(pool.map(one_trace, prompts))
        attach(traces)
        run.stage_timings[name] = round(clock() - t0, 6)
        if all(t.answer is None for t in traces):
            run.flags.append(f"stage_failure:{name}")
            _persist(run, out_dir)
            raise StageFailure(name, "every trace ended without an answer", run)
        return traces

    templates = config.role_prompts

    solver_prompt = build_role_prompt("solver", templates=templates)
    stage("solver", [solver_prompt] * n, run.solver_traces.extend)

    critic_prompts = [
        build_role_prompt("critic", [s], templates=templates)
        for s in _answers(run.solver_traces)
    ]
    stage("critic", critic_prompts, run.critic_traces.extend)
    critic_answers = _answers(run.critic_traces)

    if not config.stack:
        run.candidate_answers = critic_answers
        run.final_answer = next(
            (a for a in critic_answers if a != NO_SOLUTION), critic_answers[0]
        )
        _persist(run, out_dir)
        return run

    rewriter_prompt = build_role_prompt(
        "rewriter", critic_answers, templates=templates
    )
    stage("rewriter", [rewriter_prompt] * n, run.rewriter_traces.extend)
    rewrites = _answers(run.rewriter_traces)
    run.candidate_answers = rewrites

    if n == 1:
        # single candidate: selection is vacuous, the selector is skipped
        run.selected_index = 1
        run.final_answer = rewrites[0]
        _persist(run, out_dir)
        return run

    selector_prompt = build_role_prompt("selector", rewrites, templates=templates)

    def attach_selector(traces: list[Trace]) -> None:
        run.selector_trace = traces[0]

    stage("selector", [selector_prompt], attach_selector)
    index, flagged = parse_selection(run.selector_trace.answer or "", n)
    if flagged:
        run.flags.append("selection_fallback")
    run.selected_index = index
    run.final_answer = rewrites[index - 1]
    _persist(run, out_dir)
    return run


def _persist(run: WorkflowRun, out_dir: str | Path | None) -> None:
    if out_dir is None:
        return
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run.json").write_text(
        json.dumps(run.to_dict(), indent=2, sort_keys=True) + "\n", "utf-8"
    )
    named = [
        (f"solver_{i + 1}", t) for i, t in enumerate(run.solver_traces)
    ] + [
        (f"critic_{i + 1}", t) for i, t in enumerate(run.critic_traces)
    ] + [
        (f"rewriter_{i + 1}", t) for i, t in enumerate(run.rewriter_traces)
    ]
    if run.selector_trace is not None:
        named.append(("selector", run.selector_trace))
    for name, trace in named:
        (out / f"{name}.json").write_text(
            json.dumps(trace.to_dict(), indent=2, sort_keys=True) + "\n",
            "utf-8",
        )
