"""Markdown report rendering and metrics tables."""

from __future__ import annotations

import os
from pathlib import Path

from .execution import (
    ErrorResult,
    ExecutionResult,
    ModelResult,
    TableResult,
    VisualizationResult,
)
from .kinds import MODULES
from .ranker import CRITERIA, Recommendation
from .tables import Table, format_cell, table_to_payload

FAMILY_NAMES = {
    "ba": "Basic Analysis",
    "dv": "Data Visualization",
    "sm": "Statistics Modeling",
}


def _markdown_table(grid: Table, max_rows: int = 50) -> str:
    lines = [
        "| " + " | ".join(grid.header) + " |",
        "| " + " | ".join("---" for _ in grid.header) + " |",
    ]
    for row in grid.rows[:max_rows]:
        lines.append("| " + " | ".join(format_cell(v) for v in row) + " |")
    if grid.row_count > max_rows:
        lines.append(f"\n_... {grid.row_count - max_rows} more rows_")
    return "\n".join(lines)


def _relative_path(path: str, base: str | Path | None) -> str:
    if base is None:
        return path
    try:
        return os.path.relpath(path, base)
    except ValueError:
        return path


def result_to_json(result: ExecutionResult, rel_base: str | Path | None = None) -> dict:
    """JSON-ready view of a result; image paths relative to rel_base."""
    if isinstance(result, TableResult):
        return {"kind": "table", "grid": table_to_payload(result.grid)}
    if isinstance(result, VisualizationResult):
        return {
            "kind": "chart",
            "x_fields": list(result.chart.x_fields),
            "y_fields": list(result.chart.y_fields),
            "chart_type": result.chart.chart_type,
            "image_path": _relative_path(result.image_path, rel_base),
        }
    if isinstance(result, ModelResult):
        return {
            "kind": "model",
            "submode": result.submode,
            "metrics": dict(sorted(result.metrics.items())),
            "columns_used": list(result.columns_used),
        }
    assert isinstance(result, ErrorResult)
    return {"kind": "error", "message": result.message, "traceback": result.traceback}


def _render_result_markdown(result: ExecutionResult, rel_base: str | Path | None) -> str:
    if isinstance(result, TableResult):
        return _markdown_table(result.grid)
    if isinstance(result, VisualizationResult):
        rel = _relative_path(result.image_path, rel_base)
        fields = f"x: {', '.join(result.chart.x_fields)} / y: {', '.join(result.chart.y_fields)}"
        return f"![{result.chart.chart_type} chart]({rel})\n\n_{result.chart.chart_type} chart; {fields}_"
    if isinstance(result, ModelResult):
        lines = [f"- submode: {result.submode}"]
        for name, value in sorted(result.metrics.items()):
            lines.append(f"- {name}: {value}")
        lines.append(f"- columns used: {', '.join(result.columns_used)}")
        return "\n".join(lines)
    return f"Execution failed: {result.message}"


def render_report(rec: Recommendation, rel_base: str | Path | None = None) -> str:
    """One section per recommended triplet, plus the score table."""
    lines = [f"# Analysis recommendations: {rec.table_name}", ""]
    for item in rec.items:
        t = item.triplet
        lines.append(f"## {item.rank_position}. {t.query}")
        lines.append("")
        lines.append("```python")
        lines.append(t.code.rstrip("\n"))
        lines.append("```")
        lines.append("")
        lines.append(_render_result_markdown(t.result, rel_base))
        lines.append("")

    lines.append("## Scores")
    lines.append("")
    header = ["id", "family"] + list(CRITERIA) + ["aggregate"]
    lines.append("| " + " | ".join(header) + " |")
    lines.append("| " + " | ".join("---" for _ in header) + " |")
    for item in rec.items:
        row = [item.triplet.origin_id, item.triplet.module]
        row += [str(getattr(item.scores, name)) for name in CRITERIA]
        row.append(f"{item.s:.3f}")
        lines.append("| " + " | ".join(row) + " |")
    lines.append("")
    return "\n".join(lines)


def _fmt_pct(value: float | None) -> str:
    return f"{100.0 * value:.2f}" if value is not None else "-"


def metrics_text_table(metrics: dict) -> str:
    """Aligned per-family recall / execution-rate grid (values in %)."""
    ks = list(metrics["overall"]["recall_at"].keys())
    header = ["Family"] + [f"R@{k}" for k in ks] + ["Exec(pre)", "Exec(post)"]

    rows = []
    for module in MODULES:
        task = metrics["per_task"].get(module)
        if not task:
            continue
        recall = task.get("recall_at", {})
        rows.append(
            [FAMILY_NAMES[module]]
            + [_fmt_pct(recall.get(k)) for k in ks]
            + [_fmt_pct(task.get("exec_rate_pre")), _fmt_pct(task.get("exec_rate_post"))]
        )
    overall = metrics["overall"]
    rows.append(
        ["Overall"]
        + [_fmt_pct(overall["recall_at"].get(k)) for k in ks]
        + [_fmt_pct(overall.get("exec_rate_pre")), _fmt_pct(overall.get("exec_rate_post"))]
    )

    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) for i in range(len(header))]
    out = ["  ".join(header[i].ljust(widths[i]) if i == 0 else header[i].rjust(widths[i]) for i in range(len(header)))]
    for row in rows:
        out.append("  ".join(row[i].ljust(widths[i]) if i == 0 else row[i].rjust(widths[i]) for i in range(len(row))))
    return "\n".join(out)
