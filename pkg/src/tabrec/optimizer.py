"""Triplet refinement: polish working analyses, repair failing ones.

Branch selection is a pure function of the initial execution result: a
non-error result takes the single-pass refinement branch (A), an error
takes the repair loop (B). Branch A never loses a working result - if the
refined code errors on re-execution, the pre-refinement triplet stands.
"""

from __future__ import annotations

from dataclasses import dataclass

from .catalog import PromptCatalog
from .errors import GatewayError, NoJsonFound
from .execution import (
    ErrorResult,
    ExecRequest,
    ExecutionBridge,
    ExecutionResult,
    is_error,
    summarize_result,
)
from .gateway import ChatRequest, extract_json
from .pipeline import AnalysisCandidate, TableExplanation
from .runlog import RunLog
from .tables import SampledTable, serialize_for_prompt

DEFAULT_REPAIR_RETRIES = 2


@dataclass(frozen=True)
class Triplet:
    candidate: AnalysisCandidate
    result: ExecutionResult


@dataclass(frozen=True)
class ExecContext:
    """What re-execution needs beyond the code itself."""

    table_path: str
    artifact_dir: str
    timeout_s: float


@dataclass(frozen=True)
class OptimizedTriplet:
    origin_id: str
    module: str
    query: str
    code: str
    result: ExecutionResult
    initial_result: ExecutionResult
    attempts: int
    branch_history: tuple[str, ...]
    dropped: bool


def _ask(backend, catalog: PromptCatalog, stage: str, mock_key: str, **subs) -> dict | None:
    """One optimization request; None when nothing usable comes back."""
    request = ChatRequest(
        stage_tag=stage,
        system_prompt=catalog.render(f"{stage}_system"),
        user_prompt=catalog.render(f"{stage}_user", **subs),
        mock_key=mock_key,
    )
    try:
        value = extract_json(backend.complete(request).text)
    except (GatewayError, NoJsonFound):
        return None
    if not isinstance(value, dict):
        return None
    query = value.get("query")
    code = value.get("code")
    if not isinstance(query, str) or not query.strip():
        return None
    if not isinstance(code, str) or not code.strip():
        return None
    return {"query": query.strip(), "code": code}


def _reexecute(bridge: ExecutionBridge, ctx: ExecContext, candidate_id: str, module: str, code: str) -> ExecutionResult:
    return bridge.execute(
        ExecRequest(
            id=candidate_id,
            code=code,
            table_path=ctx.table_path,
            module=module,
            timeout_s=ctx.timeout_s,
            artifact_dir=ctx.artifact_dir,
        )
    )


def optimize(
    t: Triplet,
    st: SampledTable,
    explanation: TableExplanation,
    backend,
    catalog: PromptCatalog,
    bridge: ExecutionBridge,
    ctx: ExecContext,
    max_repair_retries: int = DEFAULT_REPAIR_RETRIES,
    log: RunLog | None = None,
) -> OptimizedTriplet:
    if max_repair_retries < 1:
        raise ValueError("max_repair_retries must be >= 1")

    cid = t.candidate.id
    table_text = serialize_for_prompt(st)
    explanation_text = explanation.to_prompt_text()

    if not is_error(t.result):
        # Branch A: one refinement pass, with fallback to the working triplet.
        refined = _ask(
            backend,
            catalog,
            "optimize_ok",
            mock_key=f"{st.source_name}:{cid}",
            query=t.candidate.query,
            code=t.candidate.code,
            result=summarize_result(t.result),
            table=table_text,
            explanation=explanation_text,
        )
        if refined is None:
            if log:
                log.warning("optimize", f"{cid}: refinement unparseable; keeping original")
            return OptimizedTriplet(
                origin_id=cid,
                module=t.candidate.module,
                query=t.candidate.query,
                code=t.candidate.code,
                result=t.result,
                initial_result=t.result,
                attempts=1,
                branch_history=("A",),
                dropped=False,
            )
        new_result = _reexecute(bridge, ctx, cid, t.candidate.module, refined["code"])
        if is_error(new_result):
            if log:
                log.warning("optimize", f"{cid}: refined code errored; falling back to original")
            query, code, result = t.candidate.query, t.candidate.code, t.result
        else:
            query, code, result = refined["query"], refined["code"], new_result
        return OptimizedTriplet(
            origin_id=cid,
            module=t.candidate.module,
            query=query,
            code=code,
            result=result,
            initial_result=t.result,
            attempts=2,
            branch_history=("A",),
            dropped=False,
        )

    # Branch B: repair loop driven by the traceback.
    query = t.candidate.query
    code = t.candidate.code
    current: ErrorResult = t.result
    attempts = 1
    history: list[str] = []
    for round_no in range(1, max_repair_retries + 1):
        history.append("B")
        repaired = _ask(
            backend,
            catalog,
            "optimize_err",
            mock_key=f"{st.source_name}:{cid}:r{round_no}",
            query=query,
            code=code,
            traceback=current.traceback or current.message,
            table=table_text,
            explanation=explanation_text,
        )
        if repaired is None:
            if log:
                log.warning("optimize", f"{cid}: repair round {round_no} unparseable")
            continue
        query, code = repaired["query"], repaired["code"]
        new_result = _reexecute(bridge, ctx, cid, t.candidate.module, code)
        attempts += 1
        if not is_error(new_result):
            return OptimizedTriplet(
                origin_id=cid,
                module=t.candidate.module,
                query=query,
                code=code,
                result=new_result,
                initial_result=t.result,
                attempts=attempts,
                branch_history=tuple(history),
                dropped=False,
            )
        current = new_result

    if log:
        log.warning("optimize", f"{cid}: still failing after {max_repair_retries} repairs; dropped")
    return OptimizedTriplet(
        origin_id=cid,
        module=t.candidate.module,
        query=query,
        code=code,
        result=current,
        initial_result=t.result,
        attempts=attempts,
        branch_history=tuple(history),
        dropped=True,
    )


def optimize_all(
    triplets: list[Triplet],
    st: SampledTable,
    explanation: TableExplanation,
    backend,
    catalog: PromptCatalog,
    bridge: ExecutionBridge,
    ctx: ExecContext,
    max_repair_retries: int = DEFAULT_REPAIR_RETRIES,
    log: RunLog | None = None,
) -> list[OptimizedTriplet]:
    """Element-wise optimization, order preserved; dropped triplets retained."""
    return [
        optimize(t, st, explanation, backend, catalog, bridge, ctx, max_repair_retries, log)
        for t in triplets
    ]
