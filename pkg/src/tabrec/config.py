"""Run configuration: one audited home for every tunable default.

Precedence is CLI flags > config file > built-in defaults. Paths inside a
config file resolve relative to the file so committed fixture sets work
from any working directory.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .execution import DEFAULT_WORKER_CMD
from .gateway import BackendConfig
from .ranker import CRITERIA

EXECUTOR_KINDS = ("process", "scripted")

_FILE_RESOLVED_PATHS = ("exec_fixtures",)
_BACKEND_FILE_RESOLVED_PATHS = ("fixtures_path",)


@dataclass
class RunConfig:
    backend: BackendConfig = field(default_factory=BackendConfig)
    row_budget: int = 20
    col_budget: int = 50
    seed: int = 42
    n_per_module: int = 4
    k: int = 5
    max_repair_retries: int = 2
    timeout_s: float = 30.0
    pool_size: int = 4
    weights: tuple[float, ...] | None = None
    output_dir: str = "runs"
    executor: str = "process"
    exec_fixtures: str = ""
    worker_cmd: tuple[str, ...] = DEFAULT_WORKER_CMD
    delimiter: str = ","
    jobs: int = 2

    def validate(self) -> None:
        if self.row_budget < 1 or self.col_budget < 1:
            raise ValueError("row_budget and col_budget must be >= 1")
        if self.n_per_module < 1:
            raise ValueError("n_per_module must be >= 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.max_repair_retries < 1:
            raise ValueError("max_repair_retries must be >= 1")
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be > 0")
        if self.pool_size < 1:
            raise ValueError("pool_size must be >= 1")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        if self.executor not in EXECUTOR_KINDS:
            raise ValueError(f"executor must be one of {EXECUTOR_KINDS}")
        if len(self.delimiter) != 1:
            raise ValueError("delimiter must be a single character")
        if self.weights is not None:
            if len(self.weights) != len(CRITERIA):
                raise ValueError(f"weights must have {len(CRITERIA)} entries")
            if any(w < 0 for w in self.weights):
                raise ValueError("weights must be non-negative")
            if abs(math.fsum(self.weights) - 1.0) > 1e-9:
                raise ValueError("weights must sum to 1")
        if self.executor == "scripted" and not self.exec_fixtures:
            raise ValueError("scripted executor requires exec_fixtures")

    def to_dict(self) -> dict:
        return {
            "backend": {
                "kind": self.backend.kind,
                "endpoint": self.backend.endpoint,
                "model_name": self.backend.model_name,
                "api_key_env": self.backend.api_key_env,
                "max_retries": self.backend.max_retries,
                "timeout_s": self.backend.timeout_s,
                "max_parallel": self.backend.max_parallel,
                "supports_vision": self.backend.supports_vision,
                "fixtures_path": self.backend.fixtures_path,
            },
            "row_budget": self.row_budget,
            "col_budget": self.col_budget,
            "seed": self.seed,
            "n_per_module": self.n_per_module,
            "k": self.k,
            "max_repair_retries": self.max_repair_retries,
            "timeout_s": self.timeout_s,
            "pool_size": self.pool_size,
            "weights": list(self.weights) if self.weights is not None else None,
            "output_dir": self.output_dir,
            "executor": self.executor,
            "exec_fixtures": self.exec_fixtures,
            "worker_cmd": list(self.worker_cmd),
            "delimiter": self.delimiter,
            "jobs": self.jobs,
        }

    def config_hash(self) -> str:
        """Digest of the behavior-relevant settings.

        Where artifacts land (output_dir) and evaluation parallelism (jobs)
        cannot change pipeline results, so identical analyses hash alike
        regardless of where a run writes.
        """
        data = self.to_dict()
        del data["output_dir"]
        del data["jobs"]
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode("utf-8")).hexdigest()

    @classmethod
    def from_dict(cls, data: dict, base: Path | None = None) -> "RunConfig":
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")

        backend_data = dict(data.pop("backend", {}) or {})
        backend_known = {f.name for f in fields(BackendConfig)}
        backend_unknown = set(backend_data) - backend_known
        if backend_unknown:
            raise ValueError(f"unknown backend config keys: {sorted(backend_unknown)}")
        if base is not None:
            for key in _BACKEND_FILE_RESOLVED_PATHS:
                if backend_data.get(key) and not Path(backend_data[key]).is_absolute():
                    backend_data[key] = str(base / backend_data[key])
            for key in _FILE_RESOLVED_PATHS:
                if data.get(key) and not Path(data[key]).is_absolute():
                    data[key] = str(base / data[key])

        if "weights" in data and data["weights"] is not None:
            data["weights"] = tuple(float(w) for w in data["weights"])
        if "worker_cmd" in data:
            data["worker_cmd"] = tuple(str(part) for part in data["worker_cmd"])

        cfg = cls(backend=BackendConfig(**backend_data), **data)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: dict | None = None) -> "RunConfig":
        """Build a config from an optional JSON file plus CLI overrides."""
        data: dict = {}
        base: Path | None = None
        if path is not None:
            path = Path(path)
            data = json.loads(path.read_text(encoding="utf-8"))
            base = path.parent.resolve()

        overrides = dict(overrides or {})
        backend_overrides = overrides.pop("backend", {})
        merged_backend = dict(data.get("backend", {}) or {})
        # Backend paths from the file resolve against the file before CLI
        # values (resolved against the cwd) overwrite them.
        if base is not None:
            for key in _BACKEND_FILE_RESOLVED_PATHS:
                if merged_backend.get(key) and not Path(merged_backend[key]).is_absolute():
                    merged_backend[key] = str(base / merged_backend[key])
        merged_backend.update({k: v for k, v in backend_overrides.items() if v is not None})

        merged = dict(data)
        if base is not None:
            for key in _FILE_RESOLVED_PATHS:
                if merged.get(key) and not Path(merged[key]).is_absolute():
                    merged[key] = str(base / merged[key])
        merged.update({k: v for k, v in overrides.items() if v is not None})
        merged["backend"] = merged_backend
        return cls.from_dict(merged, base=None)
