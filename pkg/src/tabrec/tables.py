"""Tabular data loading, typing, sampling, and prompt serialization.

Tables are immutable once constructed: rows are tuples of plain Python
values (int, float, str, bool, datetime.date, or None) and can be shared
freely across threads.
"""

from __future__ import annotations

import csv
import math
import random
import re
from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path

from .errors import EmptyTableError, ParseError

CellValue = int | float | str | bool | date | None

TYPE_INTEGER = "integer"
TYPE_REAL = "real"
TYPE_TEXT = "text"
TYPE_DATE = "date"
TYPE_BOOLEAN = "boolean"

COLUMN_TYPES = (TYPE_INTEGER, TYPE_REAL, TYPE_TEXT, TYPE_DATE, TYPE_BOOLEAN)

# Cells whose stripped, lowercased text is one of these parse as null.
NULL_LEXICON = frozenset({"", "na", "n/a", "null", "none", "-"})

# A column is typed non-text when at least this fraction of its non-null
# cells parses; stray footnote cells stay text without widening the column.
TYPE_INFERENCE_THRESHOLD = 0.95

# Rows always kept at the head of a sample: they anchor the schema and any
# units/legend rows that tend to sit at the top of real-world tables.
SAMPLE_HEAD_ROWS = 5

_INT_RE = re.compile(r"^[+-]?\d+$")
_REAL_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


@dataclass(frozen=True)
class ColumnMeta:
    name: str
    inferred_type: str
    distinct_count: int
    null_count: int


@dataclass(frozen=True)
class Table:
    name: str
    columns: tuple[ColumnMeta, ...]
    rows: tuple[tuple[CellValue, ...], ...]

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if any(not n for n in names):
            raise ValueError("column names must be non-empty")
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate column names in table {self.name!r}")
        width = len(self.columns)
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise ValueError(f"row {i} has {len(row)} cells, expected {width}")

    @property
    def row_count(self) -> int:
        return len(self.rows)

    @property
    def col_count(self) -> int:
        return len(self.columns)

    @property
    def header(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)


@dataclass(frozen=True)
class SampledTable:
    source_name: str
    columns: tuple[ColumnMeta, ...]
    rows: tuple[tuple[CellValue, ...], ...]
    kept_row_indices: tuple[int, ...]
    kept_col_indices: tuple[int, ...]
    # Full header of the source table, in source order. Generated code runs
    # against the complete table, so column validation must see every name,
    # not just the sampled subset.
    source_header: tuple[str, ...] = field(default=())

    @property
    def row_count(self) -> int:
        return len(self.rows)

    @property
    def col_count(self) -> int:
        return len(self.columns)

    @property
    def header(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)


def _is_null(raw: str) -> bool:
    return raw.strip().lower() in NULL_LEXICON


def _parse_boolean(raw: str) -> bool | None:
    lowered = raw.strip().lower()
    if lowered == "true":
        return True
    if lowered == "false":
        return False
    return None


def _parse_integer(raw: str) -> int | None:
    if _INT_RE.match(raw.strip()):
        return int(raw.strip())
    return None


def _parse_real(raw: str) -> float | None:
    stripped = raw.strip()
    if not _REAL_RE.match(stripped):
        return None
    value = float(stripped)
    return value if math.isfinite(value) else None


def _parse_date(raw: str) -> date | None:
    stripped = raw.strip()
    try:
        return date.fromisoformat(stripped)
    except ValueError:
        pass
    try:
        return datetime.strptime(stripped, "%Y/%m/%d").date()
    except ValueError:
        return None


_PARSERS = {
    TYPE_BOOLEAN: _parse_boolean,
    TYPE_INTEGER: _parse_integer,
    TYPE_REAL: _parse_real,
    TYPE_DATE: _parse_date,
}

# Narrowest first; the first type that covers the threshold wins.
_INFERENCE_ORDER = (TYPE_BOOLEAN, TYPE_INTEGER, TYPE_REAL, TYPE_DATE)


def infer_column_type(raw_values: list[str]) -> str:
    """Infer the narrowest type parsing >= 95% of non-null raw cells."""
    non_null = [v for v in raw_values if not _is_null(v)]
    if not non_null:
        return TYPE_TEXT
    for candidate in _INFERENCE_ORDER:
        parser = _PARSERS[candidate]
        parsed = sum(1 for v in non_null if parser(v) is not None)
        if parsed / len(non_null) >= TYPE_INFERENCE_THRESHOLD:
            return candidate
    return TYPE_TEXT


def type_of_value(value: CellValue) -> str | None:
    """The column type a typed cell value belongs to; None for nulls."""
    if value is None:
        return None
    if isinstance(value, bool):
        return TYPE_BOOLEAN
    if isinstance(value, int):
        return TYPE_INTEGER
    if isinstance(value, float):
        return TYPE_REAL
    if isinstance(value, date):
        return TYPE_DATE
    return TYPE_TEXT


def infer_type_of_values(values: list[CellValue]) -> str:
    """Value-level counterpart of infer_column_type, for already-typed cells.

    Integers count toward the real tally as well, so a mixed int/float
    column resolves to real rather than text.
    """
    non_null = [v for v in values if v is not None]
    if not non_null:
        return TYPE_TEXT
    tallies = {t: 0 for t in _INFERENCE_ORDER}
    for v in non_null:
        t = type_of_value(v)
        if t in tallies:
            tallies[t] += 1
        if t == TYPE_INTEGER:
            tallies[TYPE_REAL] += 1
    for candidate in _INFERENCE_ORDER:
        if tallies[candidate] / len(non_null) >= TYPE_INFERENCE_THRESHOLD:
            return candidate
    return TYPE_TEXT


def _parse_cell(raw: str, column_type: str) -> CellValue:
    if _is_null(raw):
        return None
    if column_type == TYPE_TEXT:
        return raw
    parsed = _PARSERS[column_type](raw)
    # Cells that refuse the column's type stay as text rather than null:
    # the value is real data, just not typeable.
    return raw if parsed is None else parsed


def load_table(path: str | Path, name: str, delimiter: str = ",") -> Table:
    """Load an RFC 4180 delimited file with a header row into a typed Table."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyTableError(f"{path}: file is empty") from None
        raw_rows: list[list[str]] = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(line_no, f"expected {len(header)} fields, got {len(row)}")
            raw_rows.append(row)

    if not raw_rows:
        raise EmptyTableError(f"{path}: no data rows")

    names = [h.strip() for h in header]
    if any(not n for n in names):
        raise ParseError(1, "empty column name in header")
    if len(set(names)) != len(names):
        raise ParseError(1, "duplicate column names in header")

    columns = []
    typed_cols: list[list[CellValue]] = []
    for j, col_name in enumerate(names):
        raw_col = [row[j] for row in raw_rows]
        col_type = infer_column_type(raw_col)
        typed = [_parse_cell(raw, col_type) for raw in raw_col]
        typed_cols.append(typed)
        non_null = [v for v in typed if v is not None]
        columns.append(
            ColumnMeta(
                name=col_name,
                inferred_type=col_type,
                distinct_count=len(set(non_null)),
                null_count=len(typed) - len(non_null),
            )
        )

    rows = tuple(
        tuple(typed_cols[j][i] for j in range(len(names))) for i in range(len(raw_rows))
    )
    return Table(name=name, columns=tuple(columns), rows=rows)


def sample(table: Table, row_budget: int, col_budget: int, seed: int) -> SampledTable:
    """Deterministically reduce a table to at most row_budget x col_budget.

    The first SAMPLE_HEAD_ROWS rows are always kept; the rest of the budget
    is drawn uniformly without replacement from the remaining rows. Columns
    are truncated on the right.
    """
    if row_budget < 1 or col_budget < 1:
        raise ValueError("budgets must be >= 1")

    a, b = table.row_count, table.col_count
    keep_cols = tuple(range(min(b, col_budget)))

    if a <= row_budget:
        keep_rows = tuple(range(a))
    else:
        head = list(range(min(SAMPLE_HEAD_ROWS, row_budget)))
        remaining_budget = row_budget - len(head)
        pool = list(range(len(head), a))
        rng = random.Random(seed)
        drawn = rng.sample(pool, remaining_budget) if remaining_budget else []
        keep_rows = tuple(sorted(head + drawn))

    rows = tuple(tuple(table.rows[i][j] for j in keep_cols) for i in keep_rows)
    return SampledTable(
        source_name=table.name,
        columns=tuple(table.columns[j] for j in keep_cols),
        rows=rows,
        kept_row_indices=keep_rows,
        kept_col_indices=keep_cols,
        source_header=table.header,
    )


def format_cell(value: CellValue) -> str:
    """Render a cell for prompt/report text; byte-stable per value."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, date):
        return value.isoformat()
    return str(value)


def serialize_for_prompt(st: SampledTable | Table) -> str:
    """Pipe-delimited grid with a header row; nulls render as empty fields."""
    lines = ["| " + " | ".join(st.header) + " |"]
    for row in st.rows:
        lines.append("| " + " | ".join(format_cell(v) for v in row) + " |")
    return "\n".join(lines)


def table_from_payload(payload: dict, name: str = "result") -> Table:
    """Build a Table from a wire payload {"columns": [...], "rows": [[...]]}.

    Cell types are inferred from the JSON values themselves; no string
    re-parsing happens here.
    """
    names = [str(c) for c in payload["columns"]]
    rows = [tuple(row) for row in payload["rows"]]
    columns = []
    for j, col_name in enumerate(names):
        values = [row[j] for row in rows]
        non_null = [v for v in values if v is not None]
        columns.append(
            ColumnMeta(
                name=col_name,
                inferred_type=infer_type_of_values(values),
                distinct_count=len(set(non_null)),
                null_count=len(values) - len(non_null),
            )
        )
    return Table(name=name, columns=tuple(columns), rows=tuple(rows))


def table_to_payload(table: Table) -> dict:
    """Inverse of table_from_payload for JSON-serializable grids."""
    return {
        "columns": list(table.header),
        "rows": [
            [v.isoformat() if isinstance(v, date) else v for v in row]
            for row in table.rows
        ],
    }
