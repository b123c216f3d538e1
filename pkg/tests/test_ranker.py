from __future__ import annotations

import random

import pytest

from helpers import make_table
from tabrec.catalog import PromptCatalog
from tabrec.execution import TableResult
from tabrec.gateway import MockBackend, wrap_json
from tabrec.optimizer import OptimizedTriplet
from tabrec.pipeline import TableExplanation
from tabrec.ranker import (
    CRITERIA,
    CriteriaScores,
    ScoredTriplet,
    score_set,
    select_top_k,
)
from tabrec.runlog import RunLog
from tabrec.tables import sample


@pytest.fixture(scope="module")
def catalog():
    return PromptCatalog.load()


@pytest.fixture
def sampled():
    table = make_table("t", ["a"], [[1], [2]])
    return sample(table, 20, 50, 0)


def _triplet(cid: str, module: str | None = None) -> OptimizedTriplet:
    module = module or cid.split("-")[0]
    grid = make_table("r", ["v"], [[cid]])
    result = TableResult(grid=grid)
    return OptimizedTriplet(
        origin_id=cid, module=module, query=f"q {cid}", code=f"code {cid}",
        result=result, initial_result=result, attempts=2, branch_history=("A",), dropped=False,
    )


def _scores_payload(ids_scores: dict[str, int]) -> list[dict]:
    return [
        {"id": cid, "scores": {name: value for name in CRITERIA}}
        for cid, value in ids_scores.items()
    ]


_EXPLANATION = TableExplanation(theme="t", column_notes=(), relationships=())


class TestCriteriaScores:
    def test_uniform_mean_of_all_fours_is_exactly_four(self):
        scores = CriteriaScores(4, 4, 4, 4, 4, 4)
        assert scores.aggregate() == 4.0

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            CriteriaScores(0, 4, 4, 4, 4, 4)
        with pytest.raises(ValueError):
            CriteriaScores(6, 4, 4, 4, 4, 4)

    def test_weighted_aggregate_stays_in_bounds(self):
        rng = random.Random(5)
        for _ in range(200):
            values = [rng.randint(1, 5) for _ in CRITERIA]
            raw = [rng.random() for _ in CRITERIA]
            total = sum(raw)
            weights = tuple(w / total for w in raw)
            s = CriteriaScores(*values).aggregate(weights)
            assert 1.0 <= s <= 5.0

    def test_parse_rejects_missing_keys(self):
        payload = {name: 3 for name in CRITERIA[:-1]}
        assert CriteriaScores.parse(payload) is None

    def test_weighted_aggregate_value(self):
        scores = CriteriaScores(5, 5, 5, 4, 4, 4)
        weights = (0.5, 0.1, 0.1, 0.1, 0.1, 0.1)
        assert abs(scores.aggregate(weights) - 4.7) < 1e-12


class TestScoreSet:
    def test_well_formed_scores(self, sampled, catalog):
        triplets = [_triplet(f"ba-{i}") for i in range(10)]
        backend = MockBackend()
        backend.register("rank", "t", wrap_json(_scores_payload({t.origin_id: 4 for t in triplets})))
        scored = score_set(triplets, sampled, _EXPLANATION, backend, catalog)
        assert len(scored) == 10
        assert all(item.s == 4.0 for item in scored)

    def test_missing_id_gets_neutral_fallback(self, sampled, catalog):
        triplets = [_triplet("ba-0"), _triplet("ba-1")]
        backend = MockBackend()
        backend.register("rank", "t", wrap_json(_scores_payload({"ba-0": 5})))
        log = RunLog()
        scored = score_set(triplets, sampled, _EXPLANATION, backend, catalog, log=log)
        assert scored[0].s == 5.0
        assert scored[1].scores == CriteriaScores.neutral()
        assert scored[1].s == 3.0
        assert any("ba-1" in w["message"] for w in log.warnings)

    def test_total_parse_failure_all_neutral(self, sampled, catalog):
        triplets = [_triplet("ba-0"), _triplet("dv-0", "dv")]
        backend = MockBackend()
        backend.register("rank", "t", "meaningless text")
        scored = score_set(triplets, sampled, _EXPLANATION, backend, catalog)
        assert [item.triplet.origin_id for item in scored] == ["ba-0", "dv-0"]
        assert all(item.s == 3.0 for item in scored)

    def test_custom_weights_flow_through(self, sampled, catalog):
        triplets = [_triplet("ba-0")]
        backend = MockBackend()
        payload = [{"id": "ba-0", "scores": dict(zip(CRITERIA, (5, 5, 5, 4, 4, 4)))}]
        backend.register("rank", "t", wrap_json(payload))
        weights = (0.5, 0.1, 0.1, 0.1, 0.1, 0.1)
        scored = score_set(triplets, sampled, _EXPLANATION, backend, catalog, weights=weights)
        assert abs(scored[0].s - 4.7) < 1e-12

    def test_dropped_triplet_rejected(self, sampled, catalog):
        dropped = OptimizedTriplet(
            origin_id="ba-0", module="ba", query="q", code="c",
            result=_triplet("ba-0").result, initial_result=_triplet("ba-0").result,
            attempts=3, branch_history=("B", "B"), dropped=True,
        )
        with pytest.raises(ValueError):
            score_set([dropped], sampled, _EXPLANATION, MockBackend(), catalog)

    def test_empty_rejected(self, sampled, catalog):
        with pytest.raises(ValueError):
            score_set([], sampled, _EXPLANATION, MockBackend(), catalog)


def _scored(cid: str, s: float) -> ScoredTriplet:
    return ScoredTriplet(triplet=_triplet(cid), scores=CriteriaScores.neutral(), s=s)


def brute_force_selection(scored: list[ScoredTriplet], k: int) -> list[str]:
    """Independent reimplementation of the selection comparator by explicit scan."""
    from tabrec.ranker import _id_sort_key

    remaining = list(scored)
    picked: list[ScoredTriplet] = []
    counts: dict[str, int] = {}
    while remaining and len(picked) < k:
        best = None
        for item in remaining:
            if best is None:
                best = item
                continue
            a = (-item.s, counts.get(item.triplet.module, 0), _id_sort_key(item.triplet.origin_id))
            b = (-best.s, counts.get(best.triplet.module, 0), _id_sort_key(best.triplet.origin_id))
            if a < b:
                best = item
        picked.append(best)
        counts[best.triplet.module] = counts.get(best.triplet.module, 0) + 1
        remaining.remove(best)
    return [item.triplet.origin_id for item in picked]


class TestSelectTopK:
    def test_descending_order(self):
        scored = [_scored("ba-0", 4.5), _scored("dv-1", 4.2), _scored("sm-0", 3.9)]
        rec = select_top_k(scored, 2)
        assert [i.triplet.origin_id for i in rec.items] == ["ba-0", "dv-1"]
        assert [i.rank_position for i in rec.items] == [1, 2]

    def test_module_diversity_tie_break(self):
        # After ba-0 is picked, the dv candidate wins the 4.0 tie over ba-1.
        scored = [_scored("ba-0", 4.0), _scored("ba-1", 4.0), _scored("dv-0", 4.0)]
        rec = select_top_k(scored, 3)
        assert [i.triplet.origin_id for i in rec.items] == ["ba-0", "dv-0", "ba-1"]

    def test_fewer_than_k_available(self):
        scored = [_scored(f"ba-{i}", 4.0 - i * 0.1) for i in range(6)]
        rec = select_top_k(scored, 10)
        assert len(rec.items) == 6

    def test_k_must_be_positive(self):
        with pytest.raises(ValueError):
            select_top_k([_scored("ba-0", 3.0)], 0)

    def test_permutation_invariance_and_oracle_agreement(self):
        rng = random.Random(99)
        for trial in range(120):
            n = rng.randint(1, 10)
            scored = [
                _scored(f"{rng.choice(['ba', 'dv', 'sm'])}-{i}", rng.choice([2.0, 3.0, 3.5, 4.0, 5.0]))
                for i in range(n)
            ]
            k = rng.randint(1, n)
            expected = brute_force_selection(scored, k)
            base = [i.triplet.origin_id for i in select_top_k(scored, k).items]
            assert base == expected
            shuffled = scored[:]
            rng.shuffle(shuffled)
            assert [i.triplet.origin_id for i in select_top_k(shuffled, k).items] == expected

    def test_monotonicity_raising_score_never_demotes(self):
        rng = random.Random(7)
        for _ in range(60):
            n = rng.randint(2, 8)
            scored = [
                _scored(f"{rng.choice(['ba', 'dv', 'sm'])}-{i}", rng.choice([2.0, 3.0, 4.0]))
                for i in range(n)
            ]
            target = rng.randrange(n)
            rec_before = select_top_k(scored, n)
            pos_before = next(
                i.rank_position for i in rec_before.items
                if i.triplet.origin_id == scored[target].triplet.origin_id
            )
            import dataclasses

            boosted = scored[:]
            boosted[target] = dataclasses.replace(boosted[target], s=boosted[target].s + 0.5)
            rec_after = select_top_k(boosted, n)
            pos_after = next(
                i.rank_position for i in rec_after.items
                if i.triplet.origin_id == boosted[target].triplet.origin_id
            )
            assert pos_after <= pos_before
