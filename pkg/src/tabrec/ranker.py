"""Multi-criteria scoring and top-k selection of optimized triplets.

One scoring request covers the whole candidate set so the per-item
diversity judgment can see its context; selection then orders by aggregate
score with a module-diversity tie-break so equal-scored picks spread across
analysis families.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field, replace

from .catalog import PromptCatalog
from .errors import AuthError, GatewayError, NoJsonFound
from .execution import VisualizationResult, summarize_result
from .gateway import ChatRequest, extract_json
from .optimizer import OptimizedTriplet
from .pipeline import TableExplanation
from .runlog import RunLog
from .tables import SampledTable, serialize_for_prompt

CRITERIA = (
    "meaningfulness",
    "relevance",
    "logical_coherence",
    "diversity",
    "interpretability",
    "insightfulness",
)

SCORE_MIN = 1
SCORE_MAX = 5
FALLBACK_SCORE = 3

DEFAULT_K = 5


@dataclass(frozen=True)
class CriteriaScores:
    meaningfulness: int
    relevance: int
    logical_coherence: int
    diversity: int
    interpretability: int
    insightfulness: int

    def __post_init__(self):
        for name in CRITERIA:
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or not SCORE_MIN <= value <= SCORE_MAX:
                raise ValueError(f"criterion {name} must be an integer in [1, 5], got {value!r}")

    @classmethod
    def neutral(cls) -> "CriteriaScores":
        return cls(*([FALLBACK_SCORE] * len(CRITERIA)))

    @classmethod
    def parse(cls, value) -> "CriteriaScores | None":
        if not isinstance(value, dict):
            return None
        scores = []
        for name in CRITERIA:
            raw = value.get(name)
            if isinstance(raw, bool):
                return None
            if isinstance(raw, float) and raw.is_integer():
                raw = int(raw)
            if not isinstance(raw, int) or not SCORE_MIN <= raw <= SCORE_MAX:
                return None
            scores.append(raw)
        return cls(*scores)

    def as_dict(self) -> dict[str, int]:
        return {name: getattr(self, name) for name in CRITERIA}

    def aggregate(self, weights: tuple[float, ...] | None = None) -> float:
        values = [getattr(self, name) for name in CRITERIA]
        if weights is None:
            return sum(values) / len(values)
        if len(weights) != len(CRITERIA):
            raise ValueError(f"expected {len(CRITERIA)} weights, got {len(weights)}")
        total = math.fsum(weights)
        if total <= 0:
            raise ValueError("weights must sum to a positive value")
        return math.fsum(w * v for w, v in zip(weights, values)) / total


@dataclass(frozen=True)
class ScoredTriplet:
    triplet: OptimizedTriplet
    scores: CriteriaScores
    s: float
    rank_position: int = 0


@dataclass(frozen=True)
class Recommendation:
    table_name: str
    k: int
    items: tuple[ScoredTriplet, ...]
    run_metadata: dict = field(default_factory=dict)


def _code_digest(code: str) -> str:
    return hashlib.sha256(code.encode("utf-8")).hexdigest()[:12]


def _rank_items_text(triplets: list[OptimizedTriplet]) -> str:
    items = [
        {
            "id": t.origin_id,
            "family": t.module,
            "query": t.query,
            "code_digest": _code_digest(t.code),
            "result": summarize_result(t.result),
        }
        for t in triplets
    ]
    return json.dumps(items, indent=2)


def _collect_scores(value, known_ids: set[str], log: RunLog | None) -> tuple[dict[str, CriteriaScores], bool]:
    """Parse the rank payload; second element is True when the set is complete."""
    found: dict[str, CriteriaScores] = {}
    duplicated = False
    if not isinstance(value, list):
        return {}, False
    for item in value:
        if not isinstance(item, dict):
            continue
        item_id = item.get("id")
        if item_id not in known_ids:
            if log:
                log.warning("rank", f"ignoring scores for unknown id {item_id!r}")
            continue
        parsed = CriteriaScores.parse(item.get("scores"))
        if parsed is None:
            continue
        if item_id in found:
            duplicated = True
            continue
        found[item_id] = parsed
    return found, (not duplicated and set(found) == known_ids)


def score_set(
    triplets: list[OptimizedTriplet],
    st: SampledTable,
    explanation: TableExplanation,
    backend,
    catalog: PromptCatalog,
    weights: tuple[float, ...] | None = None,
    log: RunLog | None = None,
) -> list[ScoredTriplet]:
    """Score the whole set in one request; fallback scoring guarantees output."""
    if not triplets:
        raise ValueError("score_set requires a nonempty triplet list")
    if any(t.dropped for t in triplets):
        raise ValueError("dropped triplets must be excluded before scoring")

    images: tuple[str, ...] = ()
    if getattr(backend, "supports_vision", False):
        images = tuple(
            t.result.image_path for t in triplets if isinstance(t.result, VisualizationResult)
        )
    request = ChatRequest(
        stage_tag="rank",
        system_prompt=catalog.render("rank_system"),
        user_prompt=catalog.render(
            "rank_user",
            theme=explanation.theme,
            table=serialize_for_prompt(st),
            items=_rank_items_text(triplets),
        ),
        images=images,
        mock_key=st.source_name,
    )

    known_ids = {t.origin_id for t in triplets}
    found: dict[str, CriteriaScores] = {}
    for attempt in range(2):
        try:
            value = extract_json(backend.complete(request).text)
        except AuthError:
            raise
        except (GatewayError, NoJsonFound) as exc:
            if log:
                log.warning("rank", f"attempt {attempt + 1} failed: {exc}")
            continue
        found, complete = _collect_scores(value, known_ids, log)
        if complete:
            break
        if log:
            log.warning("rank", f"attempt {attempt + 1}: ids missing or duplicated")

    scored = []
    for t in triplets:
        scores = found.get(t.origin_id)
        if scores is None:
            if log:
                log.warning("rank", f"{t.origin_id}: no valid scores; using neutral fallback")
            scores = CriteriaScores.neutral()
        scored.append(ScoredTriplet(triplet=t, scores=scores, s=scores.aggregate(weights)))
    return scored


_ID_RE = re.compile(r"^(.*)-(\d+)$")


def _id_sort_key(candidate_id: str) -> tuple[str, int]:
    match = _ID_RE.match(candidate_id)
    if match:
        return (match.group(1), int(match.group(2)))
    return (candidate_id, -1)


def select_top_k(
    scored: list[ScoredTriplet],
    k: int,
    table_name: str = "",
    run_metadata: dict | None = None,
) -> Recommendation:
    """Order by (s desc, fewer already-selected from the module, id asc).

    The comparator is total, so selection is permutation-invariant; the
    module tie-break realizes set-level diversity at equal scores.
    """
    if k < 1:
        raise ValueError("k must be >= 1")

    remaining = list(scored)
    selected: list[ScoredTriplet] = []
    module_counts: dict[str, int] = {}
    while remaining and len(selected) < k:
        best = min(
            remaining,
            key=lambda item: (
                -item.s,
                module_counts.get(item.triplet.module, 0),
                _id_sort_key(item.triplet.origin_id),
            ),
        )
        remaining.remove(best)
        module_counts[best.triplet.module] = module_counts.get(best.triplet.module, 0) + 1
        selected.append(replace(best, rank_position=len(selected) + 1))

    return Recommendation(
        table_name=table_name,
        k=k,
        items=tuple(selected),
        run_metadata=dict(run_metadata or {}),
    )
