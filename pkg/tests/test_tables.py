from __future__ import annotations

from datetime import date

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import make_table
from tabrec.errors import EmptyTableError, ParseError
from tabrec.tables import (
    SAMPLE_HEAD_ROWS,
    Table,
    infer_type_of_values,
    load_table,
    sample,
    serialize_for_prompt,
    table_from_payload,
    table_to_payload,
)


def _write(tmp_path, text, name="t.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadTable:
    def test_two_by_two_integers(self, tmp_path):
        table = load_table(_write(tmp_path, "x,y\n1,2\n3,4\n"), "t")
        assert table.row_count == 2
        assert table.col_count == 2
        assert [c.inferred_type for c in table.columns] == ["integer", "integer"]
        assert table.rows == ((1, 2), (3, 4))

    def test_null_lexicon_and_real_inference(self, tmp_path):
        table = load_table(_write(tmp_path, "price\n1.5\n2\nn/a\n"), "t")
        (col,) = table.columns
        assert col.inferred_type == "real"
        assert col.null_count == 1
        assert table.rows == ((1.5,), (2.0,), (None,))

    def test_header_only_is_empty(self, tmp_path):
        with pytest.raises(EmptyTableError):
            load_table(_write(tmp_path, "a,b\n"), "t")

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_table(tmp_path / "nope.csv", "t")

    def test_ragged_row_names_line(self, tmp_path):
        with pytest.raises(ParseError) as exc_info:
            load_table(_write(tmp_path, "a,b\n1,2\n3\n"), "t")
        assert exc_info.value.line == 3

    def test_duplicate_header(self, tmp_path):
        with pytest.raises(ParseError) as exc_info:
            load_table(_write(tmp_path, "a,a\n1,2\n"), "t")
        assert exc_info.value.line == 1

    def test_quoted_fields_keep_delimiters(self, tmp_path):
        table = load_table(_write(tmp_path, 'name,note\nwidget,"a, b"\n'), "t")
        assert table.rows == (("widget", "a, b"),)

    def test_custom_delimiter(self, tmp_path):
        table = load_table(_write(tmp_path, "a;b\n1;2\n"), "t", delimiter=";")
        assert table.rows == ((1, 2),)

    def test_date_and_boolean_columns(self, tmp_path):
        table = load_table(_write(tmp_path, "d,flag\n2024-01-05,true\n2024-02-05,false\n"), "t")
        assert [c.inferred_type for c in table.columns] == ["date", "boolean"]
        assert table.rows[0] == (date(2024, 1, 5), True)

    def test_mostly_numeric_column_keeps_stray_text(self, tmp_path):
        # 19 of 20 cells parse -> integer at the 95% threshold; the stray
        # footnote cell survives as text.
        body = "\n".join(str(i) for i in range(19))
        table = load_table(_write(tmp_path, f"v\n{body}\nsee note\n"), "t")
        assert table.columns[0].inferred_type == "integer"
        assert table.rows[-1] == ("see note",)

    def test_nan_string_is_text_not_real(self, tmp_path):
        table = load_table(_write(tmp_path, "v\nnan\ninf\nhello\n"), "t")
        assert table.columns[0].inferred_type == "text"


class TestSample:
    def test_budget_exceeds_size_keeps_everything(self):
        table = make_table("t", ["a", "b", "c"], [[i, i * 2, i * 3] for i in range(10)])
        st_ = sample(table, row_budget=20, col_budget=50, seed=0)
        assert st_.row_count == 10
        assert st_.col_count == 3
        assert st_.rows == table.rows

    def test_large_table_keeps_head_and_is_repeatable(self):
        table = make_table("t", ["a", "b", "c", "d", "e"], [[i, i, i, i, i] for i in range(1000)])
        first = sample(table, row_budget=20, col_budget=50, seed=42)
        second = sample(table, row_budget=20, col_budget=50, seed=42)
        assert first.row_count == 20
        assert set(range(SAMPLE_HEAD_ROWS)) <= set(first.kept_row_indices)
        assert len(set(first.kept_row_indices)) == 20
        assert first == second

    def test_column_truncation_keeps_leftmost(self):
        table = make_table("t", [f"c{i}" for i in range(80)], [list(range(80)) for _ in range(4)])
        st_ = sample(table, row_budget=20, col_budget=50, seed=1)
        assert st_.col_count == 50
        assert st_.kept_col_indices == tuple(range(50))

    def test_indices_strictly_increasing(self):
        table = make_table("t", ["a"], [[i] for i in range(200)])
        st_ = sample(table, row_budget=10, col_budget=1, seed=3)
        assert list(st_.kept_row_indices) == sorted(set(st_.kept_row_indices))

    def test_bad_budget_rejected(self):
        table = make_table("t", ["a"], [[1]])
        with pytest.raises(ValueError):
            sample(table, row_budget=0, col_budget=1, seed=0)


class TestSerialize:
    def test_one_by_one(self):
        table = make_table("t", ["v"], [[5]])
        st_ = sample(table, 10, 10, 0)
        assert serialize_for_prompt(st_) == "| v |\n| 5 |"

    def test_null_renders_empty(self):
        table = make_table("t", ["a", "b"], [[1, None], [2, 3]])
        st_ = sample(table, 10, 10, 0)
        text = serialize_for_prompt(st_)
        assert "| 1 |  |" in text

    def test_byte_stable(self):
        table = make_table("t", ["a", "b"], [[1.5, "x"], [None, True]])
        st_ = sample(table, 10, 10, 0)
        assert serialize_for_prompt(st_) == serialize_for_prompt(st_)


class TestPayloadRoundTrip:
    def test_round_trip(self):
        table = make_table("t", ["a", "b"], [[1, "x"], [2.5, None]])
        payload = table_to_payload(table)
        back = table_from_payload(payload, name="t")
        assert back.rows == table.rows
        assert back.header == table.header


# --- property tests ------------------------------------------------------

_CLEAN_COLUMN = st.sampled_from(["integer", "real", "text", "boolean"])


@st.composite
def clean_tables(draw):
    n_cols = draw(st.integers(min_value=1, max_value=5))
    n_rows = draw(st.integers(min_value=1, max_value=30))
    col_types = [draw(_CLEAN_COLUMN) for _ in range(n_cols)]
    value_for = {
        "integer": st.integers(min_value=-10_000, max_value=10_000),
        "real": st.floats(allow_nan=False, allow_infinity=False, width=32),
        "text": st.text(min_size=1, max_size=8),
        "boolean": st.booleans(),
    }
    rows = [
        [draw(value_for[col_types[j]]) for j in range(n_cols)] for _ in range(n_rows)
    ]
    return make_table("t", [f"c{j}" for j in range(n_cols)], rows)


@given(clean_tables())
@settings(max_examples=60, deadline=None)
def test_round_trip_identity_when_budgets_cover(table: Table):
    st_ = sample(table, table.row_count, table.col_count, seed=1)
    assert st_.rows == table.rows
    assert st_.header == table.header


@given(clean_tables(), st.integers(min_value=1, max_value=12), st.integers(min_value=0, max_value=99))
@settings(max_examples=60, deadline=None)
def test_sampling_determinism(table: Table, row_budget: int, seed: int):
    a = sample(table, row_budget, table.col_count, seed)
    b = sample(table, row_budget, table.col_count, seed)
    assert a == b


@given(clean_tables(), st.integers(min_value=1, max_value=12), st.integers(min_value=0, max_value=99))
@settings(max_examples=60, deadline=None)
def test_sampling_provenance(table: Table, row_budget: int, seed: int):
    st_ = sample(table, row_budget, max(1, table.col_count - 1), seed)
    for i, src_row in enumerate(st_.kept_row_indices):
        for j, src_col in enumerate(st_.kept_col_indices):
            assert st_.rows[i][j] == table.rows[src_row][src_col]


_WIDTH = {"boolean": 0, "integer": 1, "real": 2, "date": 2, "text": 3}


@given(clean_tables(), st.integers(min_value=1, max_value=12), st.integers(min_value=0, max_value=99))
@settings(max_examples=60, deadline=None)
def test_reinference_never_widens_clean_columns(table: Table, row_budget: int, seed: int):
    st_ = sample(table, row_budget, table.col_count, seed)
    for j, meta in enumerate(st_.columns):
        values = [row[j] for row in st_.rows]
        again = infer_type_of_values(values)
        assert _WIDTH[again] <= _WIDTH[meta.inferred_type]
