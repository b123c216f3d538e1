"""Command-line entry points: recommend on one table, evaluate on a dataset."""

from __future__ import annotations

import json
import os
import sys
import uuid
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import click

from .catalog import PromptCatalog
from .config import RunConfig
from .errors import PipelineEmpty, TabrecError
from .evaluation import CaseResult, build_metrics, dataset_stats, load_dataset
from .execution import ExecutionBridge
from .gateway import backend_from_config
from .reporting import metrics_text_table, render_report, result_to_json
from .workflow import RunOutcome, build_executor, run_recommend

EXIT_PIPELINE_EMPTY = 2


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _new_run_dir(output_dir: str, prefix: str) -> Path:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%d-%H%M%S")
    run_dir = Path(output_dir) / f"{prefix}-{stamp}-{uuid.uuid4().hex[:8]}"
    run_dir.mkdir(parents=True, exist_ok=False)
    return run_dir


def recommendation_payload(outcome: RunOutcome, run_dir: Path, timestamps: dict) -> dict:
    rec = outcome.recommendation
    items = []
    for item in rec.items:
        t = item.triplet
        items.append(
            {
                "rank_position": item.rank_position,
                "id": t.origin_id,
                "module": t.module,
                "query": t.query,
                "code": t.code,
                "scores": item.scores.as_dict(),
                "s": item.s,
                "attempts": t.attempts,
                "branch_history": list(t.branch_history),
                "result": result_to_json(t.result, rel_base=run_dir),
            }
        )
    return {
        "table_name": rec.table_name,
        "k": rec.k,
        "items": items,
        "run_metadata": {**rec.run_metadata, "timestamps": timestamps},
    }


def _write_run_artifacts(outcome: RunOutcome, run_dir: Path, cfg: RunConfig, catalog: PromptCatalog, started: str) -> None:
    payload = recommendation_payload(outcome, run_dir, {"started": started, "finished": _utc_now()})
    _write_atomic(run_dir / "recommendation.json", json.dumps(payload, indent=2, sort_keys=True) + "\n")
    _write_atomic(run_dir / "report.md", render_report(outcome.recommendation, rel_base=run_dir))
    run_info = {
        "run_id": run_dir.name,
        "table": outcome.table.name,
        "prompt_catalog_hash": catalog.digest,
        "config": cfg.to_dict(),
        "timings_ms": outcome.timings_ms,
        "warning_count": len(outcome.log.warnings),
        "started": started,
    }
    _write_atomic(run_dir / "run.json", json.dumps(run_info, indent=2, sort_keys=True) + "\n")
    _write_atomic(
        run_dir / "events.jsonl",
        "".join(json.dumps(event, sort_keys=True) + "\n" for event in outcome.log.events),
    )


def _config_from_options(config_path, backend_kind, fixtures, executor, exec_fixtures, out, seed, k, delimiter, jobs=None) -> RunConfig:
    backend_overrides = {}
    if backend_kind:
        backend_overrides["kind"] = backend_kind
    if fixtures:
        backend_overrides["fixtures_path"] = fixtures
    overrides = {
        "backend": backend_overrides,
        "executor": executor,
        "exec_fixtures": exec_fixtures,
        "output_dir": out,
        "seed": seed,
        "k": k,
        "delimiter": delimiter,
        "jobs": jobs,
    }
    return RunConfig.load(config_path, overrides)


_shared_options = [
    click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None, help="JSON config file."),
    click.option("--backend", "backend_kind", type=click.Choice(["mock", "remote"]), default=None, help="Backend kind override."),
    click.option("--fixtures", default=None, help="Mock backend fixture file."),
    click.option("--executor", type=click.Choice(["process", "scripted"]), default=None, help="Script executor override."),
    click.option("--exec-fixtures", "exec_fixtures", default=None, help="Scripted executor envelope file."),
    click.option("--out", default=None, help="Output directory for run artifacts."),
    click.option("--seed", type=int, default=None, help="Sampling seed override."),
    click.option("--delimiter", default=None, help="CSV delimiter override."),
]


def _apply(options):
    def wrap(fn):
        for option in reversed(options):
            fn = option(fn)
        return fn

    return wrap


@click.group()
def main():
    """Zero-turn analysis recommendation for tables."""


@main.command()
@click.option("--table", "table_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--k", type=int, default=None, help="Number of recommended triplets.")
@_apply(_shared_options)
def recommend(table_path, k, config_path, backend_kind, fixtures, executor, exec_fixtures, out, seed, delimiter):
    """Produce ranked query-code-result triplets for one CSV table."""
    started = _utc_now()
    try:
        cfg = _config_from_options(config_path, backend_kind, fixtures, executor, exec_fixtures, out, seed, k, delimiter)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        click.echo(f"error: bad configuration: {exc}", err=True)
        sys.exit(1)

    run_dir = _new_run_dir(cfg.output_dir, "run")
    catalog = PromptCatalog.load()
    executor_impl = None
    try:
        backend = backend_from_config(cfg.backend)
        executor_impl = build_executor(cfg)
        bridge = ExecutionBridge(executor_impl, pool_size=cfg.pool_size, delimiter=cfg.delimiter)
        outcome = run_recommend(
            table_path, cfg, backend, bridge, artifact_dir=run_dir / "artifacts", catalog=catalog
        )
    except PipelineEmpty as exc:
        click.echo(f"error: PipelineEmpty: {exc} (run log: {run_dir})", err=True)
        sys.exit(EXIT_PIPELINE_EMPTY)
    except (TabrecError, OSError) as exc:
        click.echo(f"error: {type(exc).__name__}: {exc} (run log: {run_dir})", err=True)
        sys.exit(1)
    finally:
        if executor_impl is not None and hasattr(executor_impl, "close"):
            executor_impl.close()

    _write_run_artifacts(outcome, run_dir, cfg, catalog, started)
    click.echo(
        f"recommended {len(outcome.recommendation.items)} of {len(outcome.optimized)} triplets "
        f"for {outcome.table.name}; artifacts in {run_dir}"
    )


@main.command()
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--jobs", type=int, default=None, help="Concurrent cases (default 2).")
@click.option("--macro", is_flag=True, default=False, help="Also report per-table averaged recall.")
@click.option("--k", "ks_text", default="3,5,N", show_default=True, help="Comma-separated recall cutoffs; N = full set.")
@_apply(_shared_options)
def evaluate(dataset_path, jobs, macro, ks_text, config_path, backend_kind, fixtures, executor, exec_fixtures, out, seed, delimiter):
    """Run the pipeline over a gold-labeled dataset and report metrics."""
    try:
        cfg = _config_from_options(config_path, backend_kind, fixtures, executor, exec_fixtures, out, seed, None, delimiter, jobs)
        ks = _parse_ks(ks_text)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        click.echo(f"error: bad configuration: {exc}", err=True)
        sys.exit(1)

    try:
        cases = load_dataset(dataset_path)
    except TabrecError as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        sys.exit(1)

    run_dir = _new_run_dir(cfg.output_dir, "eval")
    catalog = PromptCatalog.load()
    backend = backend_from_config(cfg.backend)
    executor_impl = build_executor(cfg)
    bridge = ExecutionBridge(executor_impl, pool_size=cfg.pool_size, delimiter=cfg.delimiter)

    def run_case(case) -> CaseResult:
        case_dir = run_dir / "cases" / case.table_id
        try:
            outcome = run_recommend(
                case.table_path, cfg, backend, bridge, artifact_dir=case_dir / "artifacts", catalog=catalog
            )
            return CaseResult(
                table_id=case.table_id,
                gold=case.gold,
                optimized=outcome.optimized,
                full_ranking=outcome.full_ranking,
            )
        except Exception as exc:  # case isolation: one failure never aborts the run
            return CaseResult(
                table_id=case.table_id,
                gold=case.gold,
                optimized=[],
                full_ranking=None,
                error=f"{type(exc).__name__}: {exc}",
            )

    try:
        if cfg.jobs == 1 or len(cases) == 1:
            results = [run_case(c) for c in cases]
        else:
            with ThreadPoolExecutor(max_workers=min(cfg.jobs, len(cases))) as pool:
                results = list(pool.map(run_case, cases))
    finally:
        if hasattr(executor_impl, "close"):
            executor_impl.close()

    metrics = build_metrics(results, ks=ks, macro=macro)
    metrics["dataset_stats"] = dataset_stats(cases)
    metrics["cases"] = [
        {"table_id": r.table_id, "error": r.error} for r in results if r.error
    ]
    _write_atomic(run_dir / "metrics.json", json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    table_text = metrics_text_table(metrics)
    _write_atomic(run_dir / "metrics.txt", table_text + "\n")
    click.echo(table_text)
    for case in metrics["cases"]:
        click.echo(f"case {case['table_id']} failed: {case['error']}", err=True)
    click.echo(f"metrics written to {run_dir}")


def _parse_ks(text: str) -> tuple:
    ks = []
    for part in text.split(","):
        part = part.strip()
        if part.upper() == "N":
            ks.append(None)
        else:
            value = int(part)
            if value < 1:
                raise ValueError(f"recall cutoff must be >= 1, got {value}")
            ks.append(value)
    if not ks:
        raise ValueError("no recall cutoffs given")
    return tuple(ks)


if __name__ == "__main__":
    main()
