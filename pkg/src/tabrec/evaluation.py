"""Metrics against gold labels: execution rate and recall at k.

Each analysis family has its own match predicate: basic-analysis grids
match as row multisets with numeric tolerance, charts match on normalized
field sets plus chart type, and model results match on submode, column
alignment, and the family's metric threshold (mape <= 1.0 for regression,
p < 0.05 for correlation, r-squared > 0.9 for forecast).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from datetime import date
from pathlib import Path

from .errors import DatasetSchemaError
from .execution import ChartSpec, ModelResult, TableResult, VisualizationResult
from .kinds import CHART_TYPES, MODULES, SUBMODES
from .optimizer import OptimizedTriplet
from .ranker import Recommendation
from .tables import Table, table_from_payload

NUMERIC_REL_TOL = 1e-9
NUMERIC_ABS_TOL = 1e-9

MAPE_MAX = 1.0
P_VALUE_MAX = 0.05
R_SQUARED_MIN = 0.9


@dataclass(frozen=True)
class GoldTable:
    grid: Table


@dataclass(frozen=True)
class GoldChart:
    x_fields: tuple[str, ...]
    y_fields: tuple[str, ...]
    chart_type: str


@dataclass(frozen=True)
class GoldModel:
    submode: str
    columns_used: tuple[str, ...]


GoldSpec = GoldTable | GoldChart | GoldModel


@dataclass(frozen=True)
class GoldLabel:
    task: str
    spec: GoldSpec


@dataclass(frozen=True)
class EvalCase:
    table_id: str
    table_path: str
    gold: tuple[GoldLabel, ...]


def _cells_match(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    if isinstance(a, bool) or isinstance(b, bool):
        return isinstance(a, bool) and isinstance(b, bool) and a == b
    a_num = isinstance(a, (int, float))
    b_num = isinstance(b, (int, float))
    if a_num and b_num:
        return math.isclose(a, b, rel_tol=NUMERIC_REL_TOL, abs_tol=NUMERIC_ABS_TOL)
    if isinstance(a, date) and isinstance(b, date):
        return a == b
    if isinstance(a, str) and isinstance(b, str):
        return a.strip() == b.strip()
    return False


def _rows_in_name_order(table: Table, names: list[str]) -> list[tuple]:
    index = {c.name: j for j, c in enumerate(table.columns)}
    order = [index[n] for n in names]
    return [tuple(row[j] for j in order) for row in table.rows]


def match_basic(got: Table, gold: GoldTable) -> bool:
    """Exact grid match up to row order, column order, and float noise."""
    got_names = set(got.header)
    gold_names = set(gold.grid.header)
    if got_names != gold_names:
        return False
    if got.row_count != gold.grid.row_count:
        return False
    names = sorted(got_names)
    got_rows = _rows_in_name_order(got, names)
    gold_rows = _rows_in_name_order(gold.grid, names)
    unmatched = list(gold_rows)
    for row in got_rows:
        for i, candidate in enumerate(unmatched):
            if all(_cells_match(a, b) for a, b in zip(row, candidate)):
                del unmatched[i]
                break
        else:
            return False
    return not unmatched


def _field_set(fields) -> frozenset[str]:
    return frozenset(f.strip().lower() for f in fields)


def match_chart(got: ChartSpec, gold: GoldChart) -> bool:
    """Chart type plus x/y field sets, case-insensitive after trimming."""
    return (
        got.chart_type.strip().lower() == gold.chart_type.strip().lower()
        and _field_set(got.x_fields) == _field_set(gold.x_fields)
        and _field_set(got.y_fields) == _field_set(gold.y_fields)
    )


def match_model(got: ModelResult, gold: GoldModel) -> bool:
    """Submode, column alignment, and the submode's metric threshold."""
    if got.submode != gold.submode:
        return False
    if {c.strip() for c in got.columns_used} != {c.strip() for c in gold.columns_used}:
        return False
    metrics = got.metrics
    if gold.submode == "regression":
        value = metrics.get("mape")
        return isinstance(value, (int, float)) and value <= MAPE_MAX
    if gold.submode == "correlation":
        value = metrics.get("p_value")
        return isinstance(value, (int, float)) and value < P_VALUE_MAX
    value = metrics.get("r_squared")
    return isinstance(value, (int, float)) and value > R_SQUARED_MIN


def triplet_matches(triplet: OptimizedTriplet, gold: GoldLabel) -> bool:
    result = triplet.result
    if gold.task == "ba" and isinstance(result, TableResult):
        return match_basic(result.grid, gold.spec)
    if gold.task == "dv" and isinstance(result, VisualizationResult):
        return match_chart(result.chart, gold.spec)
    if gold.task == "sm" and isinstance(result, ModelResult):
        return match_model(result, gold.spec)
    return False


@dataclass(frozen=True)
class ExecRateEntry:
    candidates: int
    ok_pre: int
    ok_post: int

    @property
    def pre(self) -> float:
        return self.ok_pre / self.candidates

    @property
    def post(self) -> float:
        return self.ok_post / self.candidates


@dataclass(frozen=True)
class ExecRateReport:
    per_task: dict[str, ExecRateEntry]
    overall: ExecRateEntry | None


def exec_rate(triplets: list[OptimizedTriplet]) -> ExecRateReport:
    """Fractions of candidates executing cleanly, before and after repair.

    Families with zero candidates are omitted rather than reported as 0/0.
    """
    from .execution import is_error

    per_task: dict[str, ExecRateEntry] = {}
    for module in MODULES:
        family = [t for t in triplets if t.module == module]
        if not family:
            continue
        per_task[module] = ExecRateEntry(
            candidates=len(family),
            ok_pre=sum(1 for t in family if not is_error(t.initial_result)),
            ok_post=sum(1 for t in family if not is_error(t.result)),
        )
    overall = None
    if triplets:
        overall = ExecRateEntry(
            candidates=len(triplets),
            ok_pre=sum(1 for t in triplets if not is_error(t.initial_result)),
            ok_post=sum(1 for t in triplets if not is_error(t.result)),
        )
    return ExecRateReport(per_task=per_task, overall=overall)


@dataclass(frozen=True)
class RecallEntry:
    hits: int
    gold: int

    @property
    def recall(self) -> float:
        return self.hits / self.gold


@dataclass(frozen=True)
class RecallReport:
    per_task: dict[str, RecallEntry]
    overall: RecallEntry


def recall_at_k(rec: Recommendation, gold: list[GoldLabel], k: int | None) -> RecallReport:
    """Fraction of gold items matched by the top-k recommended triplets.

    k=None means the full candidate set. A gold item counts once no matter
    how many triplets match it; one triplet may satisfy several gold items.
    """
    if k is not None and k < 1:
        raise ValueError("k must be >= 1 or None for the full set")
    pool = [item.triplet for item in (rec.items if k is None else rec.items[:k])]

    per_task: dict[str, RecallEntry] = {}
    total_hits = 0
    for module in MODULES:
        family_gold = [g for g in gold if g.task == module]
        if not family_gold:
            continue
        hits = sum(1 for g in family_gold if any(triplet_matches(t, g) for t in pool))
        per_task[module] = RecallEntry(hits=hits, gold=len(family_gold))
        total_hits += hits
    overall = RecallEntry(hits=total_hits, gold=len(gold))
    return RecallReport(per_task=per_task, overall=overall)


def _parse_gold(entry: dict, line_no: int) -> GoldLabel:
    task = entry.get("task")
    if task not in MODULES:
        raise DatasetSchemaError(line_no, "gold.task", f"expected one of {MODULES}, got {task!r}")
    spec = entry.get("spec")
    if not isinstance(spec, dict):
        raise DatasetSchemaError(line_no, "gold.spec", "missing or not an object")
    if task == "ba":
        try:
            grid = table_from_payload(spec["grid"], name="gold")
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetSchemaError(line_no, "gold.spec.grid", str(exc)) from None
        return GoldLabel(task=task, spec=GoldTable(grid=grid))
    if task == "dv":
        try:
            x_fields = tuple(str(f) for f in spec["x_fields"])
            y_fields = tuple(str(f) for f in spec["y_fields"])
            chart_type = spec["chart_type"]
        except (KeyError, TypeError) as exc:
            raise DatasetSchemaError(line_no, "gold.spec", str(exc)) from None
        if chart_type not in CHART_TYPES:
            raise DatasetSchemaError(line_no, "gold.spec.chart_type", f"unknown {chart_type!r}")
        return GoldLabel(task=task, spec=GoldChart(x_fields=x_fields, y_fields=y_fields, chart_type=chart_type))
    submode = spec.get("submode")
    if submode not in SUBMODES:
        raise DatasetSchemaError(line_no, "gold.spec.submode", f"unknown {submode!r}")
    columns = spec.get("columns_used")
    if not isinstance(columns, list) or not columns:
        raise DatasetSchemaError(line_no, "gold.spec.columns_used", "must be a nonempty list")
    return GoldLabel(task=task, spec=GoldModel(submode=submode, columns_used=tuple(str(c) for c in columns)))


def load_dataset(path: str | Path) -> list[EvalCase]:
    """Load gold-labeled cases from JSONL; table paths resolve relative to it."""
    path = Path(path)
    base = path.parent
    cases: list[EvalCase] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetSchemaError(line_no, "json", str(exc)) from None
            table_id = obj.get("table_id")
            if not isinstance(table_id, str) or not table_id:
                raise DatasetSchemaError(line_no, "table_id", "missing or empty")
            table_path = obj.get("table_path")
            if not isinstance(table_path, str) or not table_path:
                raise DatasetSchemaError(line_no, "table_path", "missing or empty")
            gold_raw = obj.get("gold")
            if not isinstance(gold_raw, list) or not gold_raw:
                raise DatasetSchemaError(line_no, "gold", "missing or empty")
            gold = tuple(_parse_gold(entry, line_no) for entry in gold_raw)
            resolved = table_path if Path(table_path).is_absolute() else str(base / table_path)
            cases.append(EvalCase(table_id=table_id, table_path=resolved, gold=gold))
    return cases


def dataset_stats(cases: list[EvalCase]) -> dict[str, dict]:
    """Gold-label counts and percentages per family (percentages to 2 dp)."""
    counts = {module: 0 for module in MODULES}
    for case in cases:
        for label in case.gold:
            counts[label.task] += 1
    total = sum(counts.values())
    return {
        module: {
            "count": counts[module],
            "pct": round(100.0 * counts[module] / total, 2) if total else 0.0,
        }
        for module in MODULES
    }


@dataclass
class CaseResult:
    """Everything one evaluated table contributes to the aggregate report."""

    table_id: str
    gold: tuple[GoldLabel, ...]
    optimized: list[OptimizedTriplet]
    full_ranking: Recommendation | None
    error: str = ""


def _k_label(k: int | None) -> str:
    return "N" if k is None else str(k)


def build_metrics(case_results: list[CaseResult], ks=(3, 5, None), macro: bool = False) -> dict:
    """Micro-averaged metrics across cases, optionally with per-table macro."""
    all_triplets = [t for c in case_results for t in c.optimized]
    exec_report = exec_rate(all_triplets)

    per_case_recall: dict[str, list[RecallReport]] = {_k_label(k): [] for k in ks}
    for case in case_results:
        for k in ks:
            if case.full_ranking is not None:
                report = recall_at_k(case.full_ranking, list(case.gold), k)
            else:
                # Failed case: every gold item is a miss.
                report = RecallReport(
                    per_task={
                        m: RecallEntry(hits=0, gold=len([g for g in case.gold if g.task == m]))
                        for m in MODULES
                        if any(g.task == m for g in case.gold)
                    },
                    overall=RecallEntry(hits=0, gold=len(case.gold)),
                )
            per_case_recall[_k_label(k)].append(report)

    def micro(reports: list[RecallReport], module: str | None) -> RecallEntry:
        if module is None:
            hits = sum(r.overall.hits for r in reports)
            gold = sum(r.overall.gold for r in reports)
        else:
            hits = sum(r.per_task[module].hits for r in reports if module in r.per_task)
            gold = sum(r.per_task[module].gold for r in reports if module in r.per_task)
        return RecallEntry(hits=hits, gold=gold)

    result: dict = {"overall": {}, "per_task": {}, "counts": {}}

    gold_total = sum(len(c.gold) for c in case_results)
    overall_recall = {}
    gold_hit_at_k = {}
    for k in ks:
        label = _k_label(k)
        entry = micro(per_case_recall[label], None)
        overall_recall[label] = entry.recall if entry.gold else None
        gold_hit_at_k[label] = entry.hits
    result["overall"] = {
        "exec_rate_pre": exec_report.overall.pre if exec_report.overall else None,
        "exec_rate_post": exec_report.overall.post if exec_report.overall else None,
        "recall_at": overall_recall,
    }
    result["counts"] = {
        "candidates": len(all_triplets),
        "executed_ok": exec_report.overall.ok_post if exec_report.overall else 0,
        "gold_total": gold_total,
        "gold_hit_at_k": gold_hit_at_k,
        "cases": len(case_results),
        "failed_cases": sum(1 for c in case_results if c.error),
    }

    for module in MODULES:
        task_entry: dict = {}
        if module in exec_report.per_task:
            task_entry["exec_rate_pre"] = exec_report.per_task[module].pre
            task_entry["exec_rate_post"] = exec_report.per_task[module].post
        recall_entries = {}
        for k in ks:
            label = _k_label(k)
            entry = micro(per_case_recall[label], module)
            if entry.gold:
                recall_entries[label] = entry.recall
        if recall_entries:
            task_entry["recall_at"] = recall_entries
        if task_entry:
            result["per_task"][module] = task_entry

    if macro:
        macro_out: dict = {"overall": {}, "per_task": {m: {} for m in MODULES}}
        for k in ks:
            label = _k_label(k)
            reports = per_case_recall[label]
            overall_values = [r.overall.recall for r in reports if r.overall.gold]
            macro_out["overall"][label] = (
                sum(overall_values) / len(overall_values) if overall_values else None
            )
            for module in MODULES:
                values = [r.per_task[module].recall for r in reports if module in r.per_task]
                if values:
                    macro_out["per_task"][module][label] = sum(values) / len(values)
        macro_out["per_task"] = {m: v for m, v in macro_out["per_task"].items() if v}
        result["macro"] = macro_out

    return result
