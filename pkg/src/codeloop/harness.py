"""Benchmark harness: dataset loading, answer judging, multi-run
benchmark execution with per-question checkpoints, and the
scatter/stack ablation driver.

Scoring model: each (question, run) pair produces one baseline trace
(same model, no tools, no guidance) plus one workflow run, and every
stage answer is judged. Stage accuracies average the n parallel answers
(the mean of the initial solutions estimates pass@1); the workflow's
own score is the selected answer when stacking is on, and the critic
average when stacking is off. Questions whose judge is unavailable are
excluded from averages and surfaced as warnings rather than silently
counted incorrect.

The shipped model-judge prompt is a reconstruction of the public
exam-style judging format, not a copy of any private one.
"""

from __future__ import annotations

import dataclasses
import json
import os
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .gateway import Gateway, GenParams, Message, ProviderError
from .runtime import run_trace
from .workflow import (
    EngineDeps,
    StageFailure,
    WorkflowConfig,
    run_workflow,
)

ANSWER_TYPES = ("exact_match", "multiple_choice")
JUDGE_MODES = ("model", "exact")

STAGE_ROWS = ("baseline", "+Solver", "+Critic", "+Rewriter", "+Selected")


class SchemaError(ValueError):
    def __init__(self, message: str, line: int) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class DuplicateId(ValueError):
    pass


class JudgeUnavailable(RuntimeError):
    pass


@dataclass(frozen=True)
class QuestionRecord:
    id: str
    question: str
    gold_answer: str
    category: str = "uncategorized"
    answer_type: str = "exact_match"


def load_dataset(path: str | Path) -> list[QuestionRecord]:
    """Validated records from a JSONL file, one object per line."""
    records: list[QuestionRecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                doc = json.loads(raw)
            except ValueError as exc:
                raise SchemaError(f"invalid JSON ({exc})", lineno)
            if not isinstance(doc, dict):
                raise SchemaError("record must be a JSON object", lineno)
            for key in ("id", "question", "gold_answer"):
                if not str(doc.get(key, "")).strip():
                    raise SchemaError(f"missing or empty field {key!r}", lineno)
            answer_type = doc.get("answer_type", "exact_match")
            if answer_type not in ANSWER_TYPES:
                raise SchemaError(
                    f"answer_type must be one of {ANSWER_TYPES}, "
                    f"got {answer_type!r}",
                    lineno,
                )
            qid = str(doc["id"])
            if qid in seen:
                raise DuplicateId(f"duplicate question id {qid!r} at line {lineno}")
            seen.add(qid)
            records.append(
                QuestionRecord(
                    id=qid,
                    question=str(doc["question"]),
                    gold_answer=str(doc["gold_answer"]),
                    category=str(doc.get("category", "uncategorized")),
                    answer_type=answer_type,
                )
            )
    return records


# -- judging ---------------------------------------------------------------


@dataclass
class Verdict:
    question_id: str
    correct: bool
    judge_rationale: str
    judge_mode: str  # "model" or "exact"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_TRAILING_PUNCT = ".,;:!?"


def normalize_answer(text: str) -> str:
    collapsed = re.sub(r"\s+", " ", text or "").strip()
    return collapsed.casefold().rstrip(_TRAILING_PUNCT).strip()


def exact_match(gold: str, prediction: str) -> bool:
    return normalize_answer(gold) == normalize_answer(prediction)


def judge_prompt_template() -> str:
    return (
        resources.files("codeloop.prompts")
        .joinpath("judge.txt")
        .read_text(encoding="utf-8")
    )


_JUDGE_PARAMS = GenParams(temperature=0.0, top_p=1.0, max_new_tokens=1024)
_CORRECT_LINE = re.compile(r"correct\s*:\s*(yes|no)\b", re.IGNORECASE)
_REASON_LINE = re.compile(r"reasoning\s*:\s*(.+)", re.IGNORECASE)


def _parse_judge_reply(text: str) -> tuple[bool, str] | None:
    m = _CORRECT_LINE.search(text or "")
    if not m:
        return None
    correct = m.group(1).lower() == "yes"
    r = _REASON_LINE.search(text)
    rationale = r.group(1).strip() if r else text.strip()
    return correct, rationale or "no rationale given"


def judge(
    record: QuestionRecord,
    prediction: str | None,
    *,
    mode: str = "exact",
    judge_gateway: Gateway | None = None,
) -> Verdict:
    """One verdict for one prediction. Empty predictions are incorrect
    without consulting any judge. Model mode retries an unparseable
    reply once, then falls back to exact matching; an unreachable judge
    raises JudgeUnavailable."""
    if mode not in JUDGE_MODES:
        raise ValueError(f"mode must be one of {JUDGE_MODES}, got {mode!r}")
    if prediction is None or not prediction.strip():
        return Verdict(record.id, False, "empty prediction", mode)
    if mode == "model":
        if judge_gateway is None:
            raise ValueError("model judging needs a judge gateway")
        prompt = judge_prompt_template().format(
            question=record.question,
            gold=record.gold_answer,
            prediction=prediction,
        )
        for _ in range(2):
            try:
                out = judge_gateway.generate_stream(
                    [Message("user", prompt)], _JUDGE_PARAMS
                )
            except ProviderError as exc:
                raise JudgeUnavailable(str(exc)) from exc
            parsed = _parse_judge_reply(out.text)
            if parsed is not None:
                return Verdict(record.id, parsed[0], parsed[1], "model")
        return Verdict(
            record.id,
            exact_match(record.gold_answer, prediction),
            "judge reply unparseable twice; exact-match fallback",
            "exact",
        )
    return Verdict(
        record.id,
        exact_match(record.gold_answer, prediction),
        "normalized string comparison",
        "exact",
    )


# -- benchmark -------------------------------------------------------------


@dataclass
class Report:
    runs: int
    question_count: int
    per_run_accuracy: list
    overall_accuracy: float | None
    per_category: dict
    category_counts: dict
    per_stage: dict
    histogram: dict
    mean_interactions: dict
    unscored_count: int
    warnings: list
    config: dict

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _pct(values: list) -> float | None:
    scored = [v for v in values if v is not None]
    if not scored:
        return None
    return round(100.0 * sum(scored) / len(scored), 6)


def _safe_name(text: str) -> str:
    return re.sub(r"[^\w.-]", "_", text)[:80]


class _Scorer:
    """Judges stage answers for one (question, run) pair, tracking
    unscored slots instead of failing the pair."""

    def __init__(self, record, mode, gateway):
        self.record = record
        self.mode = mode
        self.gateway = gateway
        self.unscored = 0

    def one(self, answer: str | None):
        try:
            return judge(
                self.record, answer, mode=self.mode, judge_gateway=self.gateway
            ).correct
        except JudgeUnavailable:
            self.unscored += 1
            return None

    def many(self, answers: list) -> list:
        return [self.one(a) for a in answers]


def _mean_bools(values: list) -> float | None:
    scored = [v for v in values if v is not None]
    if not scored:
        return None
    return sum(1.0 for v in scored if v) / len(scored)


def evaluate_pair(
    record: QuestionRecord,
    run_idx: int,
    deps: EngineDeps,
    config: WorkflowConfig,
    *,
    judge_mode: str = "exact",
    judge_gateway: Gateway | None = None,
    traces_dir: Path | None = None,
) -> dict:
    """Execute baseline + workflow for one question in one run and
    judge every stage answer."""
    scorer = _Scorer(record, judge_mode, judge_gateway)

    baseline_cfg = dataclasses.replace(config.agent, guidance_text="")
    baseline_session = None
    baseline_trace = run_trace(
        record.question,
        config.role_prompts["solver"],
        deps.gateway,
        baseline_session,
        baseline_cfg,
        tags=deps.tags,
    )

    result: dict = {
        "question_id": record.id,
        "run": run_idx,
        "category": record.category,
        "baseline": scorer.one(baseline_trace.answer),
        "cause": None,
    }
    try:
        run = run_workflow(
            record.question,
            deps,
            config,
            out_dir=traces_dir,
        )
    except StageFailure as exc:
        n = config.effective_n
        run = exc.partial
        result["cause"] = str(exc)
        result["solver"] = scorer.many(
            [t.answer for t in run.solver_traces]
        ) or [False] * n
        result["critic"] = scorer.many(
            [t.answer for t in run.critic_traces]
        ) or [False] * n
        result["rewriter"] = (
            scorer.many([t.answer for t in run.rewriter_traces])
            if config.stack
            else []
        )
        if result["rewriter"] == [] and config.stack:
            result["rewriter"] = [False] * n
        result["selected"] = False if config.stack else None
        result["workflow_score"] = (
            0.0 if config.stack else _mean_bools(result["critic"]) or 0.0
        )
        result["interactions"] = {}
        result["unscored"] = scorer.unscored
        return result

    result["solver"] = scorer.many([t.answer for t in run.solver_traces])
    result["critic"] = scorer.many([t.answer for t in run.critic_traces])
    result["rewriter"] = scorer.many(
        [t.answer for t in run.rewriter_traces]
    )
    if config.stack:
        result["selected"] = scorer.one(run.final_answer)
        result["workflow_score"] = (
            None if result["selected"] is None else float(result["selected"])
        )
    else:
        result["selected"] = None
        result["workflow_score"] = _mean_bools(result["critic"])
    result["final_answer"] = run.final_answer
    result["interactions"] = {
        "baseline": [baseline_trace.interactions],
        "solver": [t.interactions for t in run.solver_traces],
        "critic": [t.interactions for t in run.critic_traces],
        "rewriter": [t.interactions for t in run.rewriter_traces],
    }
    result["unscored"] = scorer.unscored
    return result


def run_benchmark(
    dataset: list[QuestionRecord],
    deps: EngineDeps,
    config: WorkflowConfig | None = None,
    *,
    runs: int = 3,
    out_dir: str | Path,
    judge_mode: str = "exact",
    judge_gateway: Gateway | None = None,
    concurrency: int = 4,
    keep_traces: bool = False,
) -> Report:
    """Evaluate the whole dataset ``runs`` times with per-(question,
    run) checkpoints; rerunning over an existing out_dir reuses them, so
    an interrupted benchmark resumes into the identical report."""
    if not dataset:
        raise ValueError("dataset is empty")
    if runs < 1:
        raise ValueError("runs must be >= 1")
    config = config or WorkflowConfig()
    out = Path(out_dir)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)

    lock = threading.Lock()

    def pair_result(job: tuple[QuestionRecord, int]) -> dict:
        record, run_idx = job
        name = f"{_safe_name(record.id)}__run{run_idx}.json"
        ckpt = ckpt_dir / name
        with lock:
            if ckpt.exists():
                return json.loads(ckpt.read_text("utf-8"))
        traces_dir = (
            out / "traces" / f"{_safe_name(record.id)}__run{run_idx}"
            if keep_traces
            else None
        )
        result = evaluate_pair(
            record,
            run_idx,
            deps,
            config,
            judge_mode=judge_mode,
            judge_gateway=judge_gateway,
            traces_dir=traces_dir,
        )
        tmp = ckpt.with_suffix(".tmp")
        with lock:
            tmp.write_text(
                json.dumps(result, indent=2, sort_keys=True) + "\n", "utf-8"
            )
            os.replace(tmp, ckpt)
        return result

    jobs = [(record, r) for r in range(1, runs + 1) for record in dataset]
    if concurrency > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            results = list(pool.map(pair_result, jobs))
    else:
        results = [pair_result(j) for j in jobs]

    report = assemble_report(dataset, results, runs, config)
    return report


def assemble_report(
    dataset: list[QuestionRecord],
    results: list[dict],
    runs: int,
    config: WorkflowConfig,
) -> Report:
    """Deterministic single-threaded aggregation over pair results."""
    results = sorted(results, key=lambda r: (r["run"], r["question_id"]))
    n = config.effective_n
    warnings: list[str] = []
    unscored_total = sum(r.get("unscored", 0) for r in results)
    if unscored_total:
        warnings.append(
            f"{unscored_total} answers were unscored (judge unavailable) "
            "and excluded from accuracy"
        )
    for r in results:
        if r.get("cause"):
            warnings.append(
                f"{r['question_id']} run {r['run']} failed: {r['cause']}"
            )

    per_run = []
    for run_idx in range(1, runs + 1):
        scores = [
            r["workflow_score"] for r in results if r["run"] == run_idx
        ]
        per_run.append(_pct(scores))
    overall_scored = [a for a in per_run if a is not None]
    overall = (
        round(sum(overall_scored) / len(overall_scored), 6)
        if overall_scored
        else None
    )

    categories = sorted({q.category for q in dataset})
    per_category = {}
    category_counts = {c: 0 for c in categories}
    for q in dataset:
        category_counts[q.category] += 1
    for cat in categories:
        scores = [
            r["workflow_score"] for r in results if r["category"] == cat
        ]
        per_category[cat] = _pct(scores)

    per_stage = {
        "baseline": _pct([r["baseline"] for r in results]),
        "+Solver": _pct([_mean_bools(r["solver"]) for r in results]),
        "+Critic": _pct([_mean_bools(r["critic"]) for r in results]),
        "+Rewriter": _pct(
            [_mean_bools(r["rewriter"]) for r in results]
            if config.stack
            else [None for _ in results]
        ),
        "+Selected": _pct(
            [r["selected"] for r in results] if config.stack else [None]
        ),
    }

    bins = list(range(n + 1))
    before = [0] * (n + 1)
    after = [0] * (n + 1) if config.stack else None
    population = 0
    for r in results:
        critic = r["critic"]
        if any(v is None for v in critic):
            continue
        if config.stack:
            rewriter = r["rewriter"]
            if any(v is None for v in rewriter):
                continue
            after[sum(1 for v in rewriter if v)] += 1
        before[sum(1 for v in critic if v)] += 1
        population += 1
    histogram = {
        "bins": bins,
        "before_rewriting": before,
        "after_rewriting": after,
        "population": population,
    }

    mean_interactions = {}
    for stage in ("baseline", "solver", "critic", "rewriter"):
        counts = []
        for r in results:
            counts.extend(r.get("interactions", {}).get(stage, []))
        mean_interactions[stage] = (
            round(sum(counts) / len(counts), 6) if counts else None
        )

    return Report(
        runs=runs,
        question_count=len(dataset),
        per_run_accuracy=per_run,
        overall_accuracy=overall,
        per_category=per_category,
        category_counts=category_counts,
        per_stage=per_stage,
        histogram=histogram,
        mean_interactions=mean_interactions,
        unscored_count=unscored_total,
        warnings=warnings,
        config=config.snapshot(),
    )


ABLATION_ROWS = (
    {"scatter": False, "stack": True},
    {"scatter": True, "stack": False},
    {"scatter": True, "stack": True},
)


def run_ablation(
    dataset: list[QuestionRecord],
    deps_factory,
    base_config: WorkflowConfig | None = None,
    *,
    runs: int = 1,
    out_dir: str | Path,
    judge_mode: str = "exact",
    judge_gateway: Gateway | None = None,
    concurrency: int = 4,
) -> dict:
    """Benchmark the three scatter/stack combinations; returns the grid
    with one accuracy per row plus the per-row reports."""
    base_config = base_config or WorkflowConfig()
    out = Path(out_dir)
    rows = []
    reports = {}
    for combo in ABLATION_ROWS:
        config = WorkflowConfig(
            n_parallel=base_config.n_parallel,
            scatter=combo["scatter"],
            stack=combo["stack"],
            role_prompts=base_config.role_prompts,
            agent=base_config.agent,
        )
        name = (
            f"scatter-{'on' if combo['scatter'] else 'off'}_"
            f"stack-{'on' if combo['stack'] else 'off'}"
        )
        report = run_benchmark(
            dataset,
            deps_factory(),
            config,
            runs=runs,
            out_dir=out / name,
            judge_mode=judge_mode,
            judge_gateway=judge_gateway,
            concurrency=concurrency,
        )
        reports[name] = report
        rows.append(
            {
                "scatter": combo["scatter"],
                "stack": combo["stack"],
                "accuracy": report.overall_accuracy,
            }
        )
    return {"rows": rows, "reports": reports}
