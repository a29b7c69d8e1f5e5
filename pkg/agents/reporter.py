"""
reporter.py
-----------
Renders evaluation results to the console (ASCII) and/or a markdown file.

  render_console / render_markdown   one exam: accuracy plus the per-question
                                     credits (1, 1/n for an n-way tie, 0)
  render_sweep                       accuracy per decision-rule depth
  render_comparison                  paired test between two runs
"""

from __future__ import annotations

from typing import Optional

import pandas as pd

from backend.schemas import EvalReport, RuleComparison, SweepReport


def _bar(value: float, width: int = 16) -> str:
    filled = round(min(max(value, 0.0), 1.0) * width)
    return "█" * filled + "░" * (width - filled)


def credits_frame(report: EvalReport) -> pd.DataFrame:
    frame = pd.DataFrame({"question": pd.Series(list(report.credits), dtype=object),
                          "credit": pd.Series(list(report.credits.values()), dtype=float)})
    frame["outcome"] = pd.cut(frame["credit"], bins=[-0.5, 0.0, 0.999999, 1.0],
                              labels=["wrong", "tie", "correct"])
    return frame


def _outcome_counts(frame: pd.DataFrame) -> dict:
    counts = frame["outcome"].value_counts()
    return {name: int(counts.get(name, 0)) for name in ("correct", "tie", "wrong")}


def render_console(report: EvalReport, source: str = "", max_rows: int = 20) -> str:
    SEP  = "=" * 72
    SEP2 = "-" * 72
    frame = credits_frame(report)
    counts = _outcome_counts(frame)
    lines = [
        SEP,
        "  ARC EXAM  —  Evaluation",
        SEP,
        f"  Source    : {source or '-'}",
        f"  Rule      : {report.config.get('rule', '-')}  depth={report.config.get('depth', '-')}"
        f"  scorer={report.config.get('scorer', '-')}",
        f"  Questions : {report.questions}",
        f"  Accuracy  : [{_bar(report.accuracy)}] {report.accuracy * 100:.2f}%",
        f"  Outcomes  : {counts['correct']} correct, {counts['tie']} tied, {counts['wrong']} wrong",
        f"  Time      : {report.timing_seconds:.2f}s",
        SEP,
    ]
    if max_rows > 0 and not frame.empty:
        lines += [f"  {'Question':<40}  {'Credit':>6}", "  " + SEP2]
        for row in frame.head(max_rows).itertuples(index=False):
            lines.append(f"  {str(row.question)[:40]:<40}  {row.credit:>6.3f}")
        if len(frame) > max_rows:
            lines.append(f"  … {len(frame) - max_rows} more")
        lines.append(SEP)
    return "\n".join(lines)


def render_markdown(report: EvalReport, source: str = "") -> str:
    frame = credits_frame(report)
    counts = _outcome_counts(frame)
    lines = [
        "# ARC Exam — Evaluation",
        "",
        f"**Source:** {source or '-'}  ",
        f"**Accuracy:** {report.accuracy * 100:.2f}% over {report.questions} questions  ",
        f"**Outcomes:** {counts['correct']} correct, {counts['tie']} tied, {counts['wrong']} wrong  ",
        "",
        "## Configuration",
        "",
        "| Key | Value |",
        "|-----|-------|",
    ]
    for key, value in report.config.items():
        lines.append(f"| {key} | {value} |")
    lines += [
        "",
        "## Per-question credit",
        "",
        "| Question | Credit |",
        "|----------|-------:|",
    ]
    for row in frame.itertuples(index=False):
        lines.append(f"| {row.question} | {row.credit:.3f} |")
    lines += ["", "> Credit is 1/n when the gold answer is among n tied selections."]
    return "\n".join(lines)


def render_sweep(sweep: SweepReport) -> str:
    lines = [f"  Depth sweep ({sweep.rule.value})", "  " + "-" * 40]
    for depth, acc in sorted(sweep.accuracies.items()):
        marker = "  ◀ best" if depth == sweep.best_depth else ""
        lines.append(f"  {depth:>4}  [{_bar(acc)}] {acc * 100:6.2f}%{marker}")
    return "\n".join(lines)


def render_comparison(cmp: RuleComparison, names: Optional[tuple] = None) -> str:
    a, b = names or ("A", "B")
    return "\n".join([
        f"  {a} vs {b} over {cmp.questions} questions",
        f"  mean credit difference : {cmp.mean_difference:+.4f}",
        f"  paired t               : {cmp.t_statistic:.4f}",
        f"  p-value                : {cmp.p_value:.4g}",
    ])
