"""Analysis preparation and candidate generation.

Produces the table explanation shared by all generators, then query-code
candidates from the three analysis families: basic analysis (ba), data
visualization (dv), and statistical modeling (sm). Generation is lenient by
design: malformed items are skipped with a warning and the pipeline keeps
whatever parsed, failing only when every family comes back empty.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .catalog import PromptCatalog
from .errors import AuthError, ExplanationParseError, GatewayError, NoJsonFound, PipelineEmpty
from .gateway import ChatRequest, extract_json
from .kinds import MODULES, SUBMODES
from .runlog import RunLog
from .tables import SampledTable, serialize_for_prompt

SEMANTIC_ROLES = ("identifier", "measure", "dimension", "time", "other")
RELATIONSHIP_KINDS = ("key-of", "derives", "correlates", "groups")

DEFAULT_PER_MODULE = 4

CHART_HELPER = "tp_emit_chart"


@dataclass(frozen=True)
class ColumnNote:
    column: str
    description: str
    semantic_role: str


@dataclass(frozen=True)
class Relationship:
    columns: tuple[str, ...]
    kind: str
    note: str


@dataclass(frozen=True)
class TableExplanation:
    theme: str
    column_notes: tuple[ColumnNote, ...]
    relationships: tuple[Relationship, ...]

    def to_prompt_text(self) -> str:
        return json.dumps(
            {
                "theme": self.theme,
                "column_notes": [
                    {"column": n.column, "description": n.description, "semantic_role": n.semantic_role}
                    for n in self.column_notes
                ],
                "relationships": [
                    {"columns": list(r.columns), "kind": r.kind, "note": r.note}
                    for r in self.relationships
                ],
            },
            indent=2,
        )


@dataclass(frozen=True)
class AnalysisCandidate:
    id: str
    module: str
    query: str
    code: str
    submode: str | None = None


def referenced_columns(code: str) -> set[str]:
    """String literals used in subscript position, read as column references.

    A bracket counts as a subscript when it follows an identifier, ``]``, or
    ``)``, or when it is nested directly inside another subscript (the
    ``df[["a", "b"]]`` shape). Within a subscript, a content of only quoted
    strings yields those strings. Plain list literals and call arguments are
    left alone, so label lists in generated code do not trip validation.
    """
    refs: set[str] = set()
    stack: list[tuple[int, bool]] = []  # (content start, is subscript)
    last_sig = ""  # last significant character outside string literals
    in_string: str | None = None
    escaped = False

    for i, ch in enumerate(code):
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == in_string:
                in_string = None
            continue
        if ch in "'\"":
            in_string = ch
            last_sig = ch
            continue
        if ch == "[":
            subscript = (
                last_sig.isalnum()
                or last_sig in ("_", "]", ")")
                or (bool(stack) and stack[-1][1] and last_sig in ("[", ","))
            )
            stack.append((i + 1, subscript))
        elif ch == "]" and stack:
            start, subscript = stack.pop()
            if subscript:
                refs.update(_quoted_string_list(code[start:i]))
        if not ch.isspace():
            last_sig = ch
    return refs


def _quoted_string_list(content: str) -> list[str]:
    """Parse content that is exactly a comma-separated list of quoted strings."""
    items: list[str] = []
    rest = content.strip()
    while rest:
        quote = rest[0]
        if quote not in "'\"":
            return []
        end = rest.find(quote, 1)
        if end < 0:
            return []
        items.append(rest[1:end])
        rest = rest[end + 1 :].strip()
        if not rest:
            break
        if not rest.startswith(","):
            return []
        rest = rest[1:].strip()
    return items


def _schema_text(st: SampledTable) -> str:
    return "\n".join(f"- {c.name}: {c.inferred_type}" for c in st.columns)


def _parse_explanation(value, st: SampledTable, log: RunLog | None) -> TableExplanation | None:
    if not isinstance(value, dict):
        return None
    theme = value.get("theme")
    if not isinstance(theme, str) or not theme.strip():
        return None
    known = set(st.header)

    notes: list[ColumnNote] = []
    raw_notes = value.get("column_notes", [])
    if isinstance(raw_notes, list):
        for item in raw_notes:
            if not isinstance(item, dict):
                continue
            column = item.get("column")
            if column not in known:
                if log:
                    log.warning("explain", f"column note references unknown column {column!r}; dropped")
                continue
            role = item.get("semantic_role")
            if role not in SEMANTIC_ROLES:
                role = "other"
            notes.append(ColumnNote(column=column, description=str(item.get("description", "")), semantic_role=role))

    relationships: list[Relationship] = []
    raw_rels = value.get("relationships", [])
    if isinstance(raw_rels, list):
        for rel in raw_rels:
            if not isinstance(rel, dict):
                continue
            columns = rel.get("columns")
            if not isinstance(columns, list) or not columns:
                continue
            unknown = [c for c in columns if c not in known]
            if unknown:
                if log:
                    log.warning("explain", f"relationship references unknown columns {unknown}; dropped")
                continue
            kind = rel.get("kind")
            if kind not in RELATIONSHIP_KINDS:
                if log:
                    log.warning("explain", f"relationship has unknown kind {kind!r}; dropped")
                continue
            relationships.append(Relationship(columns=tuple(columns), kind=kind, note=str(rel.get("note", ""))))

    return TableExplanation(theme=theme.strip(), column_notes=tuple(notes), relationships=tuple(relationships))


def explain(st: SampledTable, backend, catalog: PromptCatalog, log: RunLog | None = None) -> TableExplanation:
    """Generate the table explanation, re-asking once before giving up."""
    request = ChatRequest(
        stage_tag="explain",
        system_prompt=catalog.render("explain_system"),
        user_prompt=catalog.render(
            "explain_user",
            name=st.source_name,
            schema=_schema_text(st),
            table=serialize_for_prompt(st),
        ),
        mock_key=st.source_name,
    )
    for attempt in range(2):
        try:
            value = extract_json(backend.complete(request).text)
        except AuthError:
            raise  # configuration failure: re-asking cannot help
        except (GatewayError, NoJsonFound) as exc:
            if log:
                log.warning("explain", f"attempt {attempt + 1} failed: {exc}")
            continue
        parsed = _parse_explanation(value, st, log)
        if parsed is not None:
            return parsed
        if log:
            log.warning("explain", f"attempt {attempt + 1}: required fields missing")
    raise ExplanationParseError(f"no usable explanation for table {st.source_name!r}")


def _parse_candidate_items(module: str, items, st: SampledTable, log: RunLog | None) -> list[dict]:
    accepted: list[dict] = []
    if not isinstance(items, list):
        return accepted
    known = set(st.source_header)
    for idx, item in enumerate(items):
        if not isinstance(item, dict):
            _skip(log, module, idx, "not an object")
            continue
        query = item.get("query")
        code = item.get("code")
        if not isinstance(query, str) or not query.strip():
            _skip(log, module, idx, "missing query")
            continue
        if not isinstance(code, str) or not code.strip():
            _skip(log, module, idx, "missing code")
            continue
        submode = None
        if module == "sm":
            submode = item.get("submode")
            if submode not in SUBMODES:
                _skip(log, module, idx, f"invalid submode {submode!r}")
                continue
        if module == "dv" and code.count(CHART_HELPER + "(") != 1:
            _skip(log, module, idx, f"expected exactly one {CHART_HELPER} call")
            continue
        unknown = referenced_columns(code) - known
        if unknown:
            _skip(log, module, idx, f"references unknown columns {sorted(unknown)}")
            continue
        accepted.append({"query": query.strip(), "code": code, "submode": submode})
    return accepted


def _skip(log: RunLog | None, module: str, idx: int, reason: str) -> None:
    if log:
        log.warning(f"gen_{module}", f"skipped item {idx}: {reason}")


def generate_candidates(
    module: str,
    st: SampledTable,
    explanation: TableExplanation,
    n_per_module: int,
    backend,
    catalog: PromptCatalog,
    log: RunLog | None = None,
) -> list[AnalysisCandidate]:
    """Generate up to n_per_module candidates for one analysis family."""
    if module not in MODULES:
        raise ValueError(f"unknown module {module!r}")
    if n_per_module < 1:
        raise ValueError("n_per_module must be >= 1")

    request = ChatRequest(
        stage_tag=f"gen_{module}",
        system_prompt=catalog.render(f"gen_{module}_system"),
        user_prompt=catalog.render(
            f"gen_{module}_user",
            n=str(n_per_module),
            explanation=explanation.to_prompt_text(),
            table=serialize_for_prompt(st),
        ),
        mock_key=st.source_name,
    )

    accepted: list[dict] = []
    for attempt in range(2):
        try:
            value = extract_json(backend.complete(request).text)
        except AuthError:
            raise
        except (GatewayError, NoJsonFound) as exc:
            if log:
                log.warning(f"gen_{module}", f"attempt {attempt + 1} failed: {exc}")
            continue
        accepted = _parse_candidate_items(module, value, st, log)
        if accepted:
            break
    if not accepted and log:
        log.warning(f"gen_{module}", "no candidates parsed after re-ask")

    return [
        AnalysisCandidate(
            id=f"{module}-{i}",
            module=module,
            query=item["query"],
            code=item["code"],
            submode=item["submode"],
        )
        for i, item in enumerate(accepted[:n_per_module])
    ]


def run_generation(
    st: SampledTable,
    explanation: TableExplanation,
    n_per_module: int,
    backend,
    catalog: PromptCatalog,
    log: RunLog | None = None,
) -> list[AnalysisCandidate]:
    """All three families in fixed order ba, dv, sm."""
    candidates: list[AnalysisCandidate] = []
    for module in MODULES:
        candidates.extend(generate_candidates(module, st, explanation, n_per_module, backend, catalog, log))
    if not candidates:
        raise PipelineEmpty(f"all generation families returned empty for {st.source_name!r}")
    return candidates
