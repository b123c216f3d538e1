"""Execute one analysis script per request against a CSV-backed dataframe.

Each request runs in a fresh namespace pre-seeded with the dataframe `df`,
pandas/numpy/matplotlib handles, and the chart helper `tp_emit_chart`.
Scripts report through one of two channels: assigning `result` (basic
analysis and modeling) or calling the chart helper exactly once
(visualization). One JSON envelope goes back per request, always.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")  # headless: figure saving must never need a display

import io
import json
import math
import os
import signal
import sys
import time
import traceback
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

CHART_TYPES = ("line", "bar", "scatter", "pie", "area", "histogram", "box")
SUBMODES = ("regression", "correlation", "forecast")

# Envelope floats are trimmed to this many significant digits: below any
# matcher tolerance, above binary round-trip noise.
SIGNIFICANT_DIGITS = 12


class ChartAlreadyEmitted(RuntimeError):
    pass


class InvalidChartType(ValueError):
    pass


class ScriptTimeout(RuntimeError):
    pass


def round_float(value: float) -> float:
    if not math.isfinite(value):
        return value
    return float(f"{value:.{SIGNIFICANT_DIGITS}g}")


def _round_deep(value):
    if isinstance(value, bool):
        return value
    if isinstance(value, float):
        return round_float(value)
    if isinstance(value, dict):
        return {k: _round_deep(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_round_deep(v) for v in value]
    return value


class ChartCollector:
    """Captures the single allowed tp_emit_chart call of a dv script."""

    def __init__(self):
        self.spec: dict | None = None
        self.figure = None

    def emit(self, x_fields, y_fields, chart_type, figure) -> None:
        if self.spec is not None:
            raise ChartAlreadyEmitted("tp_emit_chart may be called at most once per script")
        if chart_type not in CHART_TYPES:
            raise InvalidChartType(
                f"chart_type must be one of {CHART_TYPES}, got {chart_type!r}"
            )
        self.spec = {
            "x_fields": [str(f) for f in x_fields],
            "y_fields": [str(f) for f in y_fields],
            "chart_type": chart_type,
        }
        self.figure = figure


def _cell(value):
    if value is None:
        return None
    if isinstance(value, (np.generic,)):
        value = value.item()
    if isinstance(value, float):
        if math.isnan(value):
            return None
        return round_float(value)
    if isinstance(value, (bool, int, str)):
        return value
    if isinstance(value, pd.Timestamp):
        return value.isoformat()
    return str(value)


def serialize_table(result) -> dict:
    """Normalize a DataFrame / Series / scalar into the table payload."""
    if isinstance(result, pd.DataFrame):
        return {
            "columns": [str(c) for c in result.columns],
            "rows": [[_cell(v) for v in row] for row in result.itertuples(index=False, name=None)],
        }
    if isinstance(result, pd.Series):
        index_name = str(result.index.name) if result.index.name is not None else "index"
        value_name = str(result.name) if result.name is not None else "value"
        return {
            "columns": [index_name, value_name],
            "rows": [[_cell(idx), _cell(v)] for idx, v in result.items()],
        }
    if isinstance(result, (np.generic,)):
        result = result.item()
    if isinstance(result, (bool, int, float, str)):
        return {"columns": ["value"], "rows": [[_cell(result)]]}
    raise TypeError(
        f"unsupported result type {type(result).__name__}: assign a DataFrame, Series, or scalar"
    )


def _validate_model(result) -> dict:
    if not isinstance(result, dict):
        raise TypeError("modeling scripts must assign a dict to `result`")
    submode = result.get("submode")
    if submode not in SUBMODES:
        raise ValueError(f"result['submode'] must be one of {SUBMODES}, got {submode!r}")
    metrics = result.get("metrics")
    if not isinstance(metrics, dict) or not metrics:
        raise ValueError("result['metrics'] must be a non-empty dict")
    clean_metrics = {}
    for key, value in metrics.items():
        if isinstance(value, np.generic):
            value = value.item()
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"metric {key!r} must be a number, got {value!r}")
        clean_metrics[str(key)] = value
    columns = result.get("columns_used")
    if not isinstance(columns, (list, tuple)) or not columns:
        raise ValueError("result['columns_used'] must be a non-empty list of column names")
    return {
        "submode": submode,
        "metrics": clean_metrics,
        "columns_used": [str(c) for c in columns],
    }


def run_once(request: dict) -> dict:
    """Execute one request and build its envelope; never raises."""
    started = time.monotonic()
    req_id = request.get("id")
    stdout_buf = io.StringIO()
    stderr_buf = io.StringIO()

    def envelope(status, kind, payload):
        return {
            "id": req_id,
            "status": status,
            "kind": kind,
            "payload": payload,
            "stdout": stdout_buf.getvalue(),
            "stderr": stderr_buf.getvalue(),
            "duration_ms": int((time.monotonic() - started) * 1000),
        }

    def failure(exc: BaseException):
        return envelope(
            "error",
            None,
            {"message": f"{type(exc).__name__}: {exc}", "traceback": traceback.format_exc()},
        )

    try:
        code = request["code"]
        module = request["module"]
        table_path = request["table_path"]
        timeout_s = float(request["timeout_s"])
        artifact_dir = Path(request["artifact_dir"])
        if module not in ("ba", "dv", "sm"):
            raise ValueError(f"unknown module {module!r}")
        artifact_dir.mkdir(parents=True, exist_ok=True)
    except (KeyError, TypeError, ValueError) as exc:
        return failure(exc)

    collector = ChartCollector()
    old_cwd = os.getcwd()

    def on_alarm(signum, frame):
        raise ScriptTimeout(f"timeout after {timeout_s}s")

    previous_handler = signal.signal(signal.SIGALRM, on_alarm)
    try:
        namespace = {
            "df": pd.read_csv(table_path),
            "pd": pd,
            "np": np,
            "plt": plt,
            "tp_emit_chart": collector.emit,
        }
        # Relative writes from generated code land inside the artifact dir.
        os.chdir(artifact_dir)
        signal.setitimer(signal.ITIMER_REAL, timeout_s)
        with redirect_stdout(stdout_buf), redirect_stderr(stderr_buf):
            exec(compile(code, "<analysis>", "exec"), namespace)
        signal.setitimer(signal.ITIMER_REAL, 0)

        if module == "dv":
            if collector.spec is None:
                raise RuntimeError("no chart emitted: dv scripts must call tp_emit_chart once")
            image_path = artifact_dir / f"{req_id}.png"
            figure = collector.figure
            if not hasattr(figure, "savefig"):
                raise TypeError("tp_emit_chart expects a matplotlib figure")
            figure.savefig(image_path, format="png")
            payload = {**collector.spec, "image_path": str(image_path)}
            return envelope("ok", "chart", payload)

        if "result" not in namespace:
            raise RuntimeError("no result assigned: scripts must assign the `result` variable")
        if module == "ba":
            return envelope("ok", "table", _round_deep(serialize_table(namespace["result"])))
        return envelope("ok", "model", _round_deep(_validate_model(namespace["result"])))
    except BaseException as exc:  # noqa: BLE001 -- every failure becomes an envelope
        return failure(exc)
    finally:
        signal.setitimer(signal.ITIMER_REAL, 0)
        signal.signal(signal.SIGALRM, previous_handler)
        os.chdir(old_cwd)
        plt.close("all")


def worker_loop(stdin=None, stdout=None) -> None:
    """Serve requests until stdin closes: one JSON line in, one out."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    for line in stdin:
        if not line.strip():
            continue
        try:
            request = json.loads(line)
        except json.JSONDecodeError as exc:
            response = {
                "id": None,
                "status": "error",
                "kind": None,
                "payload": {"message": f"bad request line: {exc}", "traceback": ""},
                "stdout": "",
                "stderr": "",
                "duration_ms": 0,
            }
            stdout.write(json.dumps(response) + "\n")
            stdout.flush()
            continue
        stdout.write(json.dumps(run_once(request)) + "\n")
        stdout.flush()
