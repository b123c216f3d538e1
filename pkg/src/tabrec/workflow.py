"""End-to-end orchestration: sample, explain, generate, execute, optimize, rank.

This is the in-process engine behind both CLI commands; it owns no files
beyond chart artifacts, leaving artifact layout to the caller.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

from .catalog import PromptCatalog
from .config import RunConfig
from .execution import ExecRequest, ExecutionBridge, ProcessExecutor, ScriptedExecutor
from .optimizer import ExecContext, OptimizedTriplet, Triplet, optimize_all
from .pipeline import AnalysisCandidate, TableExplanation, explain, run_generation
from .ranker import Recommendation, ScoredTriplet, score_set, select_top_k
from .runlog import RunLog
from .tables import SampledTable, Table, load_table, sample


@dataclass
class RunOutcome:
    table: Table
    sampled: SampledTable
    explanation: TableExplanation
    candidates: list[AnalysisCandidate]
    optimized: list[OptimizedTriplet]
    scored: list[ScoredTriplet]
    full_ranking: Recommendation
    recommendation: Recommendation
    log: RunLog
    timings_ms: dict[str, int] = field(default_factory=dict)


def build_executor(cfg: RunConfig):
    if cfg.executor == "scripted":
        return ScriptedExecutor.from_file(cfg.exec_fixtures)
    return ProcessExecutor(worker_cmd=cfg.worker_cmd)


def run_recommend(
    table_path: str | Path,
    cfg: RunConfig,
    backend,
    bridge: ExecutionBridge,
    artifact_dir: str | Path,
    catalog: PromptCatalog | None = None,
    log: RunLog | None = None,
) -> RunOutcome:
    catalog = catalog or PromptCatalog.load()
    log = log or RunLog()
    table_path = str(table_path)
    artifact_dir = Path(artifact_dir)
    artifact_dir.mkdir(parents=True, exist_ok=True)
    timings: dict[str, int] = {}

    def timed(stage: str, fn):
        started = time.monotonic()
        result = fn()
        timings[stage] = int((time.monotonic() - started) * 1000)
        log.event(stage, "done", elapsed_ms=timings[stage])
        return result

    name = Path(table_path).stem
    table = timed("load", lambda: load_table(table_path, name, cfg.delimiter))
    sampled = timed("sample", lambda: sample(table, cfg.row_budget, cfg.col_budget, cfg.seed))
    explanation = timed("explain", lambda: explain(sampled, backend, catalog, log))
    candidates = timed(
        "generate",
        lambda: run_generation(sampled, explanation, cfg.n_per_module, backend, catalog, log),
    )

    requests = [
        ExecRequest(
            id=c.id,
            code=c.code,
            table_path=table_path,
            module=c.module,
            timeout_s=cfg.timeout_s,
            artifact_dir=str(artifact_dir),
        )
        for c in candidates
    ]
    results = timed("execute", lambda: bridge.execute_batch(requests, cfg.pool_size))
    triplets = [Triplet(candidate=c, result=r) for c, r in zip(candidates, results)]

    ctx = ExecContext(table_path=table_path, artifact_dir=str(artifact_dir), timeout_s=cfg.timeout_s)
    optimized = timed(
        "optimize",
        lambda: optimize_all(
            triplets, sampled, explanation, backend, catalog, bridge, ctx, cfg.max_repair_retries, log
        ),
    )

    live = [t for t in optimized if not t.dropped]
    run_metadata = {
        "prompt_catalog_hash": catalog.digest,
        "backend_id": backend.backend_id,
        "seed": cfg.seed,
        "config_hash": cfg.config_hash(),
    }
    if live:
        scored = timed(
            "rank",
            lambda: score_set(live, sampled, explanation, backend, catalog, cfg.weights, log),
        )
        full_ranking = select_top_k(scored, len(scored), table_name=name, run_metadata=run_metadata)
        # Greedy selection has the prefix property: the top-k recommendation
        # is exactly the head of the full ranking.
        recommendation = Recommendation(
            table_name=name,
            k=cfg.k,
            items=full_ranking.items[: cfg.k],
            run_metadata=run_metadata,
        )
    else:
        log.warning("rank", "no live triplets to rank; empty recommendation")
        scored = []
        full_ranking = Recommendation(table_name=name, k=cfg.k, items=(), run_metadata=run_metadata)
        recommendation = full_ranking

    return RunOutcome(
        table=table,
        sampled=sampled,
        explanation=explanation,
        candidates=candidates,
        optimized=optimized,
        scored=scored,
        full_ranking=full_ranking,
        recommendation=recommendation,
        log=log,
        timings_ms=timings,
    )
