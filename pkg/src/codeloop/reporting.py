"""Report rendering: JSON, markdown, CSV tables, and PNG figures.

One report directory holds machine-readable outputs (report.json plus
one CSV per table) and human-readable ones (report.md plus rendered
matplotlib figures) side by side.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .harness import STAGE_ROWS, Report


def _fmt(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.1f}"


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def _stage_rows(report: Report) -> list[list]:
    return [
        [stage, "" if report.per_stage[stage] is None else report.per_stage[stage]]
        for stage in STAGE_ROWS
    ]


def _histogram_rows(report: Report) -> list[list]:
    h = report.histogram
    after = h["after_rewriting"]
    rows = []
    for k in h["bins"]:
        rows.append(
            [k, h["before_rewriting"][k], "" if after is None else after[k]]
        )
    return rows


def _markdown(report: Report, ablation: dict | None) -> str:
    lines = [
        "# Benchmark report",
        "",
        f"- questions: {report.question_count}",
        f"- runs: {report.runs}",
        f"- overall accuracy: {_fmt(report.overall_accuracy)}%",
        f"- per-run accuracy: "
        + ", ".join(_fmt(a) for a in report.per_run_accuracy),
        f"- unscored answers: {report.unscored_count}",
        "",
        "## Accuracy by stage",
        "",
        "| Stage | Accuracy (%) |",
        "| --- | --- |",
    ]
    for stage in STAGE_ROWS:
        lines.append(f"| {stage} | {_fmt(report.per_stage[stage])} |")
    lines += [
        "",
        "## Accuracy by category",
        "",
        "| Category | Questions | Accuracy (%) |",
        "| --- | --- | --- |",
    ]
    for cat in sorted(report.per_category):
        lines.append(
            f"| {cat} | {report.category_counts[cat]} | "
            f"{_fmt(report.per_category[cat])} |"
        )
    h = report.histogram
    lines += [
        "",
        "## Correct answers among parallel candidates",
        "",
        f"Population: {h['population']} question-runs.",
        "",
        "| Correct count | Before rewriting | After rewriting |",
        "| --- | --- | --- |",
    ]
    for row in _histogram_rows(report):
        shown = [str(c) if c != "" else "n/a" for c in row]
        lines.append("| " + " | ".join(shown) + " |")
    if ablation is not None:
        lines += [
            "",
            "## Scatter/stack ablation",
            "",
            "| Scatter | Stack | Accuracy (%) |",
            "| --- | --- | --- |",
        ]
        for row in ablation["rows"]:
            lines.append(
                f"| {'on' if row['scatter'] else 'off'} | "
                f"{'on' if row['stack'] else 'off'} | "
                f"{_fmt(row['accuracy'])} |"
            )
    if report.warnings:
        lines += ["", "## Warnings", ""]
        lines += [f"- {w}" for w in report.warnings]
    lines.append("")
    return "\n".join(lines)


def _render_figures(report: Report, out: Path) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []

    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    stages = [s for s in STAGE_ROWS if report.per_stage[s] is not None]
    values = [report.per_stage[s] for s in stages]
    ax.bar(stages, values, color="#4878cf")
    ax.set_ylabel("Accuracy (%)")
    ax.set_ylim(0, 100)
    ax.set_title("Accuracy by workflow stage")
    for i, v in enumerate(values):
        ax.text(i, v + 1.5, f"{v:.1f}", ha="center", fontsize=9)
    fig.tight_layout()
    path = out / "stage_accuracy.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    h = report.histogram
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    xs = h["bins"]
    width = 0.4
    ax.bar(
        [x - width / 2 for x in xs],
        h["before_rewriting"],
        width,
        label="before rewriting",
        color="#b0b0b0",
    )
    if h["after_rewriting"] is not None:
        ax.bar(
            [x + width / 2 for x in xs],
            h["after_rewriting"],
            width,
            label="after rewriting",
            color="#d65f5f",
        )
    ax.set_xlabel("Correct answers among parallel candidates")
    ax.set_ylabel("Question-runs")
    ax.set_xticks(xs)
    ax.set_title("Candidate correctness distribution")
    ax.legend()
    fig.tight_layout()
    path = out / "rewrite_histogram.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)
    return written


def write_report(
    report: Report,
    out_dir: str | Path,
    *,
    ablation: dict | None = None,
    figures: bool = True,
) -> list[Path]:
    """Write every report artifact into out_dir; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "report.json"
    payload = report.to_dict()
    if ablation is not None:
        payload["ablation"] = {"rows": ablation["rows"]}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", "utf-8")
    written.append(path)

    path = out / "report.md"
    path.write_text(_markdown(report, ablation), "utf-8")
    written.append(path)

    path = out / "stage_table.csv"
    _write_csv(path, ["stage", "accuracy_percent"], _stage_rows(report))
    written.append(path)

    path = out / "rewrite_histogram.csv"
    _write_csv(
        path,
        ["correct_count", "before_rewriting", "after_rewriting"],
        _histogram_rows(report),
    )
    written.append(path)

    if ablation is not None:
        path = out / "ablation_grid.csv"
        _write_csv(
            path,
            ["scatter", "stack", "accuracy_percent"],
            [
                [
                    "on" if r["scatter"] else "off",
                    "on" if r["stack"] else "off",
                    "" if r["accuracy"] is None else r["accuracy"],
                ]
                for r in ablation["rows"]
            ],
        )
        written.append(path)

    if figures:
        written.extend(_render_figures(report, out))
    return written
