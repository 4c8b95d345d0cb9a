from __future__ import annotations

import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from evasive_cbr.casebase import CaseStore
from evasive_cbr.errors import LengthMismatch, MissingEmbedding, ZeroVector
from evasive_cbr.retrieval import RetrievalQuery, cosine_similarity, retrieve_random, retrieve_similar
from evasive_cbr.taxonomy import RiskType

from conftest import RISKS, make_case, random_store
from oracles.retrieval_oracle import top_k

finite = st.floats(-10, 10, allow_nan=False).filter(lambda x: abs(x) > 1e-3)


@given(st.lists(finite, min_size=1, max_size=12), st.data())
def test_cosine_symmetric_and_bounded(a, data):
    b = data.draw(st.lists(finite, min_size=len(a), max_size=len(a)))
    s = cosine_similarity(a, b)
    assert -1.0 <= s <= 1.0
    assert s == pytest.approx(cosine_similarity(b, a), abs=1e-12)
    assert cosine_similarity(a, a) == pytest.approx(1.0, abs=1e-12)


@given(st.lists(finite, min_size=2, max_size=8), st.floats(0.1, 100))
def test_cosine_scale_invariant(a, c):
    b = list(reversed(a))
    assert cosine_similarity([c * x for x in a], b) == pytest.approx(cosine_similarity(a, b), abs=1e-9)


def test_cosine_errors():
    with pytest.raises(LengthMismatch):
        cosine_similarity([1, 0], [1, 0, 0])
    with pytest.raises(ZeroVector):
        cosine_similarity([0, 0], [1, 0])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 120), st.sampled_from([2, 5, 16]), st.integers(0, 7))
def test_similar_matches_bruteforce(seed, n, dim, k):
    rng = random.Random(seed)
    store = random_store(rng, n, dim, dup_rate=0.2)
    view = store.snapshot()
    rt = rng.choice(RISKS)
    q = [rng.gauss(0, 1) for _ in range(dim)]
    hits = retrieve_similar(view, RetrievalQuery(rt, q, k))
    assert [h.case_id for h in hits] == top_k(store.cases, rt, q, k)
    assert len(hits) == min(k, len(view.index[rt]))
    sims = [h.similarity for h in hits]
    assert sims == sorted(sims, reverse=True)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 80), st.integers(0, 6), st.booleans())
def test_never_crosses_risk_type(seed, n, k, use_random):
    rng = random.Random(seed)
    store = random_store(rng, n, 4)
    view = store.snapshot()
    rt = rng.choice(RISKS)
    if use_random:
        hits = retrieve_random(view, rt, k, seed)
    else:
        hits = retrieve_similar(view, RetrievalQuery(rt, [1.0, 0.5, -0.2, 0.1], k))
    assert all(view[h.case_id].risk_type is rt for h in hits)


def test_ties_break_by_case_id():
    store = CaseStore()
    for cid in ["c9", "c2", "c5", "c1"]:
        store.add(make_case(cid, RiskType.CONFLICT_WITH_PEDESTRIAN, [1.0, 1.0]))
    store.add(make_case("c0", RiskType.CONFLICT_WITH_PEDESTRIAN, [1.0, -1.0]))
    hits = retrieve_similar(store.snapshot(), RetrievalQuery(RiskType.CONFLICT_WITH_PEDESTRIAN, [2.0, 2.0], 3))
    assert [h.case_id for h in hits] == ["c1", "c2", "c5"]
    assert hits[0].similarity == hits[2].similarity


def test_k_beyond_partition_and_empty_partition():
    store = CaseStore()
    store.add(make_case("a", RiskType.HEAD_ON_CONFLICT, [1.0, 0.0]))
    store.add(make_case("b", RiskType.HEAD_ON_CONFLICT, [0.0, 1.0]))
    view = store.snapshot()
    assert len(retrieve_similar(view, RetrievalQuery(RiskType.HEAD_ON_CONFLICT, [1.0, 0.1], 5))) == 2
    assert retrieve_similar(view, RetrievalQuery(RiskType.CONFLICT_WITH_PEDESTRIAN, [1.0, 0.1], 5)) == []
    assert retrieve_random(view, RiskType.CONFLICT_WITH_PEDESTRIAN, 3, 0) == []


def test_query_errors():
    store = CaseStore()
    store.add(make_case("a", RiskType.HEAD_ON_CONFLICT, [1.0, 0.0]))
    view = store.snapshot()
    with pytest.raises(LengthMismatch):
        retrieve_similar(view, RetrievalQuery(RiskType.HEAD_ON_CONFLICT, [1.0, 0.0, 0.0], 1))
    with pytest.raises(ZeroVector):
        retrieve_similar(view, RetrievalQuery(RiskType.HEAD_ON_CONFLICT, [0.0, 0.0], 1))
    bare = CaseStore()
    bare.add(make_case("x", RiskType.HEAD_ON_CONFLICT, None))
    with pytest.raises(MissingEmbedding):
        retrieve_similar(bare.snapshot(), RetrievalQuery(RiskType.HEAD_ON_CONFLICT, [1.0, 0.0], 1))


@given(st.integers(0, 2**31), st.integers(1, 6))
def test_random_is_seeded_and_without_replacement(seed, k):
    view = random_store(random.Random(5), 150, 3).snapshot()
    rt = RiskType.CONFLICT_WITH_MERGING_VEHICLE
    a = retrieve_random(view, rt, k, seed)
    assert a == retrieve_random(view, rt, k, seed)
    ids = [h.case_id for h in a]
    assert len(set(ids)) == len(ids) == min(k, len(view.index[rt]))
    assert all(h.similarity is None for h in a)


def test_random_cross_type_draws_from_whole_base():
    view = random_store(random.Random(6), 200, 3).snapshot()
    seen = set()
    for s in range(40):
        seen |= {view[h.case_id].risk_type for h in
                 retrieve_random(view, RiskType.HEAD_ON_CONFLICT, 5, s, cross_type=True)}
    assert len(seen) > 1


def test_random_reports_similarity_with_query():
    view = random_store(random.Random(7), 50, 3).snapshot()
    q = [0.3, -0.2, 0.9]
    for h in retrieve_random(view, RISKS[0], 3, 1, query=q):
        assert math.isclose(h.similarity, cosine_similarity(view[h.case_id].embedding, q))
