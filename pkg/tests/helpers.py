from __future__ import annotations

import sys
from pathlib import Path

from tabrec.tables import ColumnMeta, Table, infer_type_of_values

TESTS_DIR = Path(__file__).parent
GOLDEN_DIR = TESTS_DIR / "fixtures" / "golden"
FAKE_WORKER_CMD = (sys.executable, str(TESTS_DIR / "fake_worker.py"))


def make_table(name: str, columns: list[str], rows: list[list]) -> Table:
    """Build a Table from already-typed cell values."""
    metas = []
    for j, col_name in enumerate(columns):
        values = [row[j] for row in rows]
        non_null = [v for v in values if v is not None]
        metas.append(
            ColumnMeta(
                name=col_name,
                inferred_type=infer_type_of_values(values),
                distinct_count=len(set(non_null)),
                null_count=len(values) - len(non_null),
            )
        )
    return Table(name=name, columns=tuple(metas), rows=tuple(tuple(r) for r in rows))
