from __future__ import annotations

import json
import threading
import time

import pytest

from evasive_cbr.casebase import CaseStore
from evasive_cbr.errors import DataError
from evasive_cbr.gateway import MockEmbedder
from evasive_cbr.mocks import CaseFollowingChat, ScriptedChat, decision_response
from evasive_cbr.pipeline import RunConfig, decide_event, event_seed, read_records, run_batch
from evasive_cbr.prompts import PromptConfig
from evasive_cbr.taxonomy import VALUE_FIELDS, EvasiveManeuver, PromptMode, Sampling

from conftest import RISKS, event, make_case


def _values(m=EvasiveManeuver.EMERGENCY_BRAKING):
    return {**{f: f"{f} text" for f in VALUE_FIELDS}, "ego_car_evasive_maneuver": m.value}


@pytest.fixture
def store():
    emb = MockEmbedder()
    s = CaseStore(emb.model_id)
    for i, rt in enumerate(RISKS * 3):
        cap = f"Case {i} caption about {rt.name.lower().replace('_', ' ')} on a road."
        s.add(make_case(f"c{i:03d}", rt, emb(cap), maneuver=EvasiveManeuver.EVASIVE_STEERING_LEFT, caption=cap))
    return s


def _cfg(shots=0, sampling=Sampling.NONE, **kw):
    return RunConfig("mock", PromptConfig(PromptMode.RISK_AWARE, shots), sampling, **kw)


def test_sampling_shots_consistency():
    with pytest.raises(DataError):
        _cfg(0, Sampling.SIMILARITY)
    with pytest.raises(DataError):
        _cfg(3, Sampling.NONE)


def test_zero_shot_decision(store):
    rec = decide_event(_cfg(), store.snapshot(), event("e1"), None, ScriptedChat({}, decision_response(_values())))
    assert rec.ok and rec.meta.shots == 0 and rec.meta.retrieved_case_ids == ()
    assert rec.decision.ego_car_evasive_maneuver is EvasiveManeuver.EMERGENCY_BRAKING


def test_similarity_uses_same_type_examples(store):
    rt = RISKS[3]
    rec = decide_event(_cfg(3, Sampling.SIMILARITY), store.snapshot(), event("e1", rt), MockEmbedder(),
                       CaseFollowingChat())
    assert rec.ok and len(rec.meta.retrieved_case_ids) == 3
    view = store.snapshot()
    assert all(view[c].risk_type is rt for c in rec.meta.retrieved_case_ids)
    assert rec.decision.ego_car_evasive_maneuver is EvasiveManeuver.EVASIVE_STEERING_LEFT


def test_embedder_model_mismatch_is_a_failed_record(store):
    rec = decide_event(_cfg(1, Sampling.SIMILARITY), store.snapshot(), event("e1"), MockEmbedder("other"),
                       CaseFollowingChat())
    assert not rec.ok and rec.error_type == "EmbeddingModelMismatch"


def test_failures_are_captured(store):
    chat = ScriptedChat({"bad": "no json here", "boom": lambda req: 1 / 0}, decision_response(_values()))
    cfg = _cfg()
    recs, manifest = run_batch(cfg, store, [event("ok"), event("bad"), event("boom")], None, chat)
    assert [r.ok for r in recs] == [True, False, False]
    assert recs[1].error_type == "NoObjectFound" and recs[1].raw_response == "no json here"
    assert recs[2].error_type == "ZeroDivisionError"
    assert manifest["n_ok"] == 1 and manifest["n_failed"] == 2


def test_reask_recovers(store):
    replies = iter(["garbage", decision_response(_values())])
    chat = lambda req: next(replies)  # noqa: E731
    rec = decide_event(_cfg(reask=True), store.snapshot(), event("e"), None, chat)
    assert rec.ok


def test_random_uses_per_event_seed(store):
    cfg = _cfg(1, Sampling.RANDOM, seed=11)
    view = store.snapshot()
    ev = event("same-id", RISKS[0])
    a = decide_event(cfg, view, ev, None, CaseFollowingChat())
    b = decide_event(cfg, view, ev, None, CaseFollowingChat())
    assert a.meta.retrieved_case_ids == b.meta.retrieved_case_ids
    assert event_seed(11, "x") == event_seed(11, "x") != event_seed(12, "x")


def test_concurrency_preserves_order_and_content(store, fourteen_events):
    slow = lambda req: (time.sleep(0.001 * (hash(req.user) % 5)), decision_response(_values()))[1]  # noqa: E731
    serial, _ = run_batch(_cfg(3, Sampling.SIMILARITY), store, fourteen_events, MockEmbedder(), slow)
    par, _ = run_batch(_cfg(3, Sampling.SIMILARITY, concurrency=6), store, fourteen_events, MockEmbedder(), slow)
    assert [r.event_id for r in par] == [e.event_id for e in fourteen_events]
    assert [r.to_dict() for r in par] == [r.to_dict() for r in serial]


def test_batch_reads_one_snapshot(store, fourteen_events):
    """Retains landing mid-batch are invisible to that batch."""
    view = store.snapshot()
    lock = threading.Lock()

    def chat(req):
        with lock:
            store.add(make_case(f"late{len(store)}", RISKS[0], MockEmbedder()("late case")))
        return decision_response(_values())

    recs, manifest = run_batch(_cfg(1, Sampling.SIMILARITY, concurrency=4), view, fourteen_events,
                               MockEmbedder(), chat)
    assert manifest["store_digest"] == view.digest()
    assert not any(c.startswith("late") for r in recs for c in r.meta.retrieved_case_ids)


def test_records_file_is_deterministic(tmp_path, store, fourteen_events):
    cfg = _cfg(3, Sampling.RANDOM, seed=4, concurrency=3)
    run_batch(cfg, store, fourteen_events, None, CaseFollowingChat(), out_dir=tmp_path / "a")
    run_batch(cfg, store, fourteen_events, None, CaseFollowingChat(), out_dir=tmp_path / "b")
    assert (tmp_path / "a/records.jsonl").read_bytes() == (tmp_path / "b/records.jsonl").read_bytes()
    back = read_records(tmp_path / "a")
    assert [r.event_id for r in back] == [e.event_id for e in fourteen_events]
    manifest = json.loads((tmp_path / "a/manifest.json").read_text())
    assert manifest["seed"] == 4 and manifest["digest_algorithm"] == "sha256"


def test_identity_ignores_concurrency():
    assert _cfg(concurrency=1).identity() == _cfg(concurrency=8).identity()
    assert _cfg(seed=1).identity() != _cfg(seed=2).identity()


def test_small_partition_uses_available_examples(store):
    rec = decide_event(_cfg(5, Sampling.SIMILARITY), store.snapshot(), event("e", RISKS[0]), MockEmbedder(),
                       CaseFollowingChat())
    assert rec.ok and rec.meta.shots == 3
    empty = CaseStore("mock-embed")
    rec = decide_event(_cfg(1, Sampling.RANDOM), empty.snapshot(), event("e"), None, CaseFollowingChat())
    assert not rec.ok and "no cases" in rec.error_message
