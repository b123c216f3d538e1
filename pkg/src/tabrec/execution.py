"""Execution bridge: run candidate scripts against the full table.

The bridge hands requests to an executor and classifies wire responses into
one of four results: a table grid, a visualization, a model report, or an
error. Two executors implement the same one-envelope-per-request contract:

- ScriptedExecutor: an in-process fake returning canned envelopes, used by
  tests and fixture-replay runs; no child processes involved.
- ProcessExecutor: a pool of long-lived worker processes speaking
  newline-delimited JSON over stdin/stdout, with hard timeouts, crash
  recovery, and periodic recycling.
"""

from __future__ import annotations

import copy
import json
import os
import select
import struct
import subprocess
import sys
import threading
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .errors import ScriptedEnvelopeMissing
from .kinds import CHART_TYPES, KIND_FOR_MODULE, METRIC_FOR_SUBMODE, MODULES, SUBMODES
from .tables import Table, table_from_payload

DEFAULT_TIMEOUT_S = 30.0
DEFAULT_POOL_SIZE = 4

# A worker is replaced after this many runs to bound memory creep from
# generated code, and immediately after any crash.
RECYCLE_AFTER = 50

# Extra wall time granted beyond the script timeout before the bridge
# hard-kills a worker; the worker enforces the script timeout itself.
HARD_KILL_GRACE_S = 2.0

DEFAULT_WORKER_CMD = (sys.executable, "-m", "tabrec_sandbox", "--worker")

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


@dataclass(frozen=True)
class ExecRequest:
    id: str
    code: str
    table_path: str
    module: str
    timeout_s: float = DEFAULT_TIMEOUT_S
    artifact_dir: str = "."

    def __post_init__(self):
        if self.module not in MODULES:
            raise ValueError(f"unknown module {self.module!r}")
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be > 0")

    def to_wire(self) -> dict:
        return {
            "id": self.id,
            "code": self.code,
            "table_path": self.table_path,
            "module": self.module,
            "timeout_s": self.timeout_s,
            "artifact_dir": self.artifact_dir,
        }


@dataclass(frozen=True)
class ChartSpec:
    x_fields: tuple[str, ...]
    y_fields: tuple[str, ...]
    chart_type: str


@dataclass(frozen=True, kw_only=True)
class _ResultCommon:
    stdout: str = ""
    stderr: str = ""
    duration_ms: int = 0


@dataclass(frozen=True, kw_only=True)
class TableResult(_ResultCommon):
    grid: Table


@dataclass(frozen=True, kw_only=True)
class VisualizationResult(_ResultCommon):
    chart: ChartSpec
    image_path: str


@dataclass(frozen=True, kw_only=True)
class ModelResult(_ResultCommon):
    submode: str
    metrics: dict
    columns_used: tuple[str, ...]


@dataclass(frozen=True, kw_only=True)
class ErrorResult(_ResultCommon):
    message: str
    traceback: str = ""


ExecutionResult = TableResult | VisualizationResult | ModelResult | ErrorResult


def is_error(result: ExecutionResult) -> bool:
    return isinstance(result, ErrorResult)


def _normalize_name(name: str) -> str:
    return name.strip().lower()


def looks_like_png(path: str | Path) -> bool:
    """Signature + IHDR check; cheap stand-in for a full decode."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(16)
    except OSError:
        return False
    return head.startswith(_PNG_SIGNATURE) and head[12:16] == b"IHDR"


def _placeholder_png() -> bytes:
    def chunk(tag: bytes, data: bytes) -> bytes:
        return (
            struct.pack(">I", len(data))
            + tag
            + data
            + struct.pack(">I", zlib.crc32(tag + data))
        )

    ihdr = struct.pack(">IIBBBBB", 1, 1, 8, 2, 0, 0, 0)
    idat = zlib.compress(b"\x00\x00\x00\x00")
    return _PNG_SIGNATURE + chunk(b"IHDR", ihdr) + chunk(b"IDAT", idat) + chunk(b"IEND", b"")


PLACEHOLDER_PNG = _placeholder_png()


def _error(resp: dict, message: str, traceback: str = "") -> ErrorResult:
    return ErrorResult(
        message=message,
        traceback=traceback,
        stdout=resp.get("stdout", ""),
        stderr=resp.get("stderr", ""),
        duration_ms=int(resp.get("duration_ms", 0)),
    )


def classify_response(req: ExecRequest, resp: dict, header: tuple[str, ...] | None) -> ExecutionResult:
    """Map a wire envelope onto the four-way result union.

    Contract violations (wrong kind for the module, malformed payloads,
    invalid chart columns, missing model metrics) classify as errors rather
    than raising: every request must yield exactly one result.
    """
    common = {
        "stdout": resp.get("stdout", ""),
        "stderr": resp.get("stderr", ""),
        "duration_ms": int(resp.get("duration_ms", 0)),
    }
    payload = resp.get("payload") or {}

    if resp.get("status") != "ok":
        return _error(resp, payload.get("message", "execution failed"), payload.get("traceback", ""))

    expected_kind = KIND_FOR_MODULE[req.module]
    if resp.get("kind") != expected_kind:
        return _error(
            resp,
            f"contract violation: module {req.module!r} expects kind "
            f"{expected_kind!r}, got {resp.get('kind')!r}",
        )

    if expected_kind == "table":
        try:
            grid = table_from_payload(payload, name=req.id)
        except (KeyError, TypeError, ValueError) as exc:
            return _error(resp, f"contract violation: bad table payload ({exc})")
        return TableResult(grid=grid, **common)

    if expected_kind == "chart":
        try:
            x_fields = tuple(str(f) for f in payload["x_fields"])
            y_fields = tuple(str(f) for f in payload["y_fields"])
            chart_type = str(payload["chart_type"])
            image_path = str(payload["image_path"])
        except (KeyError, TypeError) as exc:
            return _error(resp, f"contract violation: bad chart payload ({exc})")
        if chart_type not in CHART_TYPES:
            return _error(resp, f"contract violation: unknown chart_type {chart_type!r}")
        if not (x_fields or y_fields):
            return _error(resp, "contract violation: chart has no fields")
        if header is not None:
            known = {_normalize_name(h) for h in header}
            bad = [f for f in (*x_fields, *y_fields) if _normalize_name(f) not in known]
            if bad:
                return _error(resp, f"contract violation: chart fields not in table header: {bad}")
        if not looks_like_png(image_path):
            return _error(resp, f"contract violation: missing or undecodable PNG at {image_path!r}")
        return VisualizationResult(
            chart=ChartSpec(x_fields=x_fields, y_fields=y_fields, chart_type=chart_type),
            image_path=image_path,
            **common,
        )

    # model
    submode = payload.get("submode")
    if submode not in SUBMODES:
        return _error(resp, f"contract violation: unknown submode {submode!r}")
    metrics = payload.get("metrics")
    if not isinstance(metrics, dict):
        return _error(resp, "contract violation: model payload has no metrics object")
    required = METRIC_FOR_SUBMODE[submode]
    value = metrics.get(required)
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        return _error(resp, f"contract violation: metric {required!r} missing for {submode}")
    if required == "mape" and value < 0:
        return _error(resp, f"contract violation: mape must be >= 0, got {value}")
    if required == "p_value" and not (0.0 <= value <= 1.0):
        return _error(resp, f"contract violation: p_value must be in [0, 1], got {value}")
    columns_used = payload.get("columns_used") or []
    if not isinstance(columns_used, list):
        return _error(resp, "contract violation: columns_used must be a list")
    return ModelResult(
        submode=submode,
        metrics={k: v for k, v in metrics.items()},
        columns_used=tuple(str(c) for c in columns_used),
        **common,
    )


def summarize_result(result: ExecutionResult, max_rows: int = 10) -> str:
    """Compact, prompt-friendly rendering of an execution result."""
    if isinstance(result, TableResult):
        grid = result.grid
        shown = grid.rows[:max_rows]
        from .tables import format_cell  # local import avoids a cycle at module load

        lines = ["| " + " | ".join(grid.header) + " |"]
        lines += ["| " + " | ".join(format_cell(v) for v in row) + " |" for row in shown]
        if grid.row_count > max_rows:
            lines.append(f"... ({grid.row_count - max_rows} more rows)")
        return "\n".join(lines)
    if isinstance(result, VisualizationResult):
        return (
            f"{result.chart.chart_type} chart; x={list(result.chart.x_fields)}; "
            f"y={list(result.chart.y_fields)}; image saved"
        )
    if isinstance(result, ModelResult):
        metrics = json.dumps(result.metrics, sort_keys=True)
        return f"{result.submode} model; metrics {metrics}; columns {list(result.columns_used)}"
    tail = result.traceback[-800:] if result.traceback else ""
    return f"ERROR: {result.message}\n{tail}".rstrip()


class ScriptedExecutor:
    """Canned-envelope executor keyed by (table file name, module, code).

    Chart envelopes may carry an image_path relative to the request's
    artifact directory; a placeholder PNG is materialized there so results
    satisfy the same invariants as real runs.
    """

    def __init__(self):
        self._envelopes: dict[tuple[str, str, str], dict] = {}

    def register(self, table: str, module: str, code: str, response: dict) -> None:
        key = (Path(table).name, module, code)
        if key in self._envelopes:
            raise ValueError(f"envelope already registered for {key[:2]} + code")
        self._envelopes[key] = response

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedExecutor":
        executor = cls()
        for entry in json.loads(Path(path).read_text(encoding="utf-8")):
            executor.register(entry["table"], entry["module"], entry["code"], entry["response"])
        return executor

    def run(self, request: dict) -> dict:
        key = (Path(request["table_path"]).name, request["module"], request["code"])
        if key not in self._envelopes:
            raise ScriptedEnvelopeMissing(key[0], key[1], key[2])
        resp = copy.deepcopy(self._envelopes[key])
        resp["id"] = request["id"]
        payload = resp.get("payload") or {}
        if resp.get("kind") == "chart" and "image_path" in payload:
            image_path = Path(payload["image_path"])
            if not image_path.is_absolute():
                image_path = Path(request["artifact_dir"]) / image_path
            image_path.parent.mkdir(parents=True, exist_ok=True)
            if not image_path.exists():
                image_path.write_bytes(PLACEHOLDER_PNG)
            payload["image_path"] = str(image_path)
        return resp


class _Worker:
    """One child process speaking the line protocol; not thread-safe."""

    def __init__(self, cmd: tuple[str, ...]):
        self.cmd = cmd
        self.proc: subprocess.Popen | None = None
        self.executions = 0

    def alive(self) -> bool:
        return self.proc is not None and self.proc.poll() is None

    def start(self) -> None:
        self.stop()
        self.proc = subprocess.Popen(
            list(self.cmd),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
        )
        self.executions = 0

    def stop(self) -> None:
        if self.proc is not None and self.proc.poll() is None:
            self.proc.kill()
            self.proc.wait()
        self.proc = None

    def run(self, request: dict, deadline_s: float) -> tuple[str, dict | None]:
        """Returns ("ok", envelope), ("crash", None), or ("timeout", None)."""
        if not self.alive():
            self.start()
        assert self.proc is not None
        try:
            self.proc.stdin.write((json.dumps(request) + "\n").encode("utf-8"))
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError):
            return ("crash", None)

        buf = b""
        fd = self.proc.stdout.fileno()
        deadline = time.monotonic() + deadline_s
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return ("timeout", None)
            readable, _, _ = select.select([fd], [], [], remaining)
            if not readable:
                return ("timeout", None)
            chunk = os.read(fd, 65536)
            if not chunk:
                return ("crash", None)
            buf += chunk
            if b"\n" in buf:
                line = buf.split(b"\n", 1)[0]
                try:
                    envelope = json.loads(line.decode("utf-8"))
                except (json.JSONDecodeError, UnicodeDecodeError):
                    return ("crash", None)
                self.executions += 1
                return ("ok", envelope)


class ProcessExecutor:
    """Pool of worker processes; each calling thread owns one worker."""

    def __init__(
        self,
        worker_cmd: tuple[str, ...] = DEFAULT_WORKER_CMD,
        recycle_after: int = RECYCLE_AFTER,
        grace_s: float = HARD_KILL_GRACE_S,
    ):
        self.worker_cmd = tuple(worker_cmd)
        self.recycle_after = recycle_after
        self.grace_s = grace_s
        self._local = threading.local()
        self._workers: list[_Worker] = []
        self._lock = threading.Lock()

    def _worker(self) -> _Worker:
        worker = getattr(self._local, "worker", None)
        if worker is None:
            worker = _Worker(self.worker_cmd)
            self._local.worker = worker
            with self._lock:
                self._workers.append(worker)
        return worker

    def run(self, request: dict) -> dict:
        worker = self._worker()
        started = time.monotonic()
        status, envelope = worker.run(request, request["timeout_s"] + self.grace_s)
        elapsed_ms = int((time.monotonic() - started) * 1000)

        if status == "ok" and envelope is not None and envelope.get("id") != request["id"]:
            # A desynchronized worker cannot be trusted with further requests.
            status, envelope = ("crash", None)

        if status == "ok":
            assert envelope is not None
            if worker.executions >= self.recycle_after:
                worker.start()
            return envelope

        worker.start()  # crash or hard timeout: replace the process
        if status == "timeout":
            message = f"timeout after {request['timeout_s']}s (worker killed)"
        else:
            message = "sandbox_crash"
        return {
            "id": request["id"],
            "status": "error",
            "kind": None,
            "payload": {"message": message, "traceback": ""},
            "stdout": "",
            "stderr": "",
            "duration_ms": elapsed_ms,
        }

    def close(self) -> None:
        with self._lock:
            for worker in self._workers:
                worker.stop()
            self._workers.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class ExecutionBridge:
    """Classifies executor envelopes and restores request order for batches."""

    def __init__(self, executor, pool_size: int = DEFAULT_POOL_SIZE, delimiter: str = ","):
        if pool_size < 1:
            raise ValueError("pool_size must be >= 1")
        self.executor = executor
        self.pool_size = pool_size
        self.delimiter = delimiter
        self._headers: dict[str, tuple[str, ...] | None] = {}

    def _header(self, table_path: str) -> tuple[str, ...] | None:
        if table_path not in self._headers:
            try:
                import csv

                with open(table_path, newline="", encoding="utf-8") as fh:
                    row = next(csv.reader(fh, delimiter=self.delimiter))
                self._headers[table_path] = tuple(name.strip() for name in row)
            except (OSError, StopIteration):
                self._headers[table_path] = None
        return self._headers[table_path]

    def execute(self, req: ExecRequest) -> ExecutionResult:
        resp = self.executor.run(req.to_wire())
        return classify_response(req, resp, self._header(req.table_path))

    def execute_batch(self, reqs: list[ExecRequest], pool_size: int | None = None) -> list[ExecutionResult]:
        if not reqs:
            return []
        workers = pool_size if pool_size is not None else self.pool_size
        if workers < 1:
            raise ValueError("pool_size must be >= 1")
        if workers == 1 or len(reqs) == 1:
            return [self.execute(r) for r in reqs]
        with ThreadPoolExecutor(max_workers=min(workers, len(reqs))) as pool:
            return list(pool.map(self.execute, reqs))
