from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from evasive_cbr.casebase import CaseStore
from evasive_cbr.errors import (DataError, DuplicateEventId, InsufficientType, MissingValueField, ParseError,
                                TransportError)
from evasive_cbr.experiment import (Dataset, SweepConfig, build_case_base, ingest, preset, report,
                                    retain_from_run, run_sweep, split_balanced, write_dataset)
from evasive_cbr.gateway import MockEmbedder
from evasive_cbr.mocks import CaseFollowingChat, ScriptedChat, decision_response
from evasive_cbr.synthetic import generate
from evasive_cbr.taxonomy import AnnotatedEvent, PromptMode, RiskType, Sampling

from conftest import CAPTION, MANEUVERS, RISKS, event


def _gold_reply(entry: AnnotatedEvent) -> str:
    return decision_response(entry.case_values())


def _wrong_reply(entry: AnnotatedEvent) -> str:
    gt = entry.event.ground_truth_maneuver
    other = next(m for m in MANEUVERS if m is not gt)
    return decision_response({**entry.case_values(), "ego_car_evasive_maneuver": other.value})


# -- ingest ----------------------------------------------------------------

def test_ingest_synthetic_counts(tmp_path, synthetic_entries):
    path = tmp_path / "ds.jsonl"
    write_dataset(path, synthetic_entries)
    ds = ingest(path)
    assert len(ds) == 1000
    assert sorted(ds.counts().values()) == [142] + [143] * 6
    assert ds.digest == Dataset(synthetic_entries).digest
    assert not ds.warnings


def test_ingest_duplicate_and_bad_label(tmp_path):
    rec = {"event_id": "a", "caption": CAPTION, "risk_type": "Head-on Conflict",
           "ground_truth_maneuver": "Emergency Braking"}
    path = tmp_path / "d.jsonl"
    path.write_text(json.dumps(rec) + "\n" + json.dumps(rec) + "\n")
    with pytest.raises(DuplicateEventId):
        ingest(path)
    path.write_text(json.dumps(rec) + "\n\n" + json.dumps({**rec, "event_id": "b",
                                                          "ground_truth_maneuver": "Swerve"}) + "\n")
    with pytest.raises(ParseError) as info:
        ingest(path)
    assert info.value.line_no == 3
    path.write_text("{broken\n")
    with pytest.raises(ParseError):
        ingest(path)


def test_ingest_warns_on_caption_band(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text(json.dumps({"event_id": "a", "caption": "Too short.", "risk_type": "Head-on Conflict",
                                "ground_truth_maneuver": "Emergency Braking"}) + "\n")
    ds = ingest(path)
    assert len(ds) == 1 and len(ds.warnings) == 1


def test_ingest_csv_fallback_with_quoted_multiline(tmp_path, synthetic_entries):
    path = tmp_path / "d.csv"
    entry = synthetic_entries[0]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["event_id", "caption", "risk_type", "ground_truth_maneuver", "event_context"])
        w.writerow([entry.event_id, entry.event.caption + ",\nsecond line", entry.event.risk_type.value,
                    entry.event.ground_truth_maneuver.value, "context, with comma"])
    ds = ingest(path)
    assert ds.entries[0].event.caption.endswith("second line")
    assert ds.entries[0].values == {"event_context": "context, with comma"}


# -- split -----------------------------------------------------------------

def test_split_reference_sizes(synthetic_entries):
    test, bank = split_balanced(Dataset(synthetic_entries), 100, seed=3)
    assert len(test) == 100 and len(bank) == 900
    assert set(Counter(e.event.risk_type for e in test).values()) <= {14, 15}
    assert not {e.event_id for e in test} & {e.event_id for e in bank}


def test_split_seven_is_one_per_type(synthetic_entries):
    test, _ = split_balanced(synthetic_entries, 7, seed=0)
    assert Counter(e.event.risk_type for e in test) == Counter(RISKS)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.sampled_from(RISKS), min_size=7, max_size=200), st.integers(0, 2**31), st.data())
def test_split_balance_and_determinism(types, seed, data):
    entries = [AnnotatedEvent(event(f"e{i}", rt, MANEUVERS[i % 8])) for i, rt in enumerate(types)]
    size = data.draw(st.integers(0, len(entries)))
    try:
        test, bank = split_balanced(entries, size, seed)
    except InsufficientType as e:
        assert e.available < e.quota
        return
    counts = Counter(e.event.risk_type for e in test)
    lo, hi = size // 7, -(-size // 7)
    assert all(lo <= counts[r] <= hi for r in RISKS)
    assert len(test) == size
    assert sorted(e.event_id for e in test + bank) == sorted(e.event_id for e in entries)
    order = {e.event_id: i for i, e in enumerate(entries)}
    assert [order[e.event_id] for e in test] == sorted(order[e.event_id] for e in test)
    assert split_balanced(entries, size, seed) == (test, bank)


def test_split_rejects_oversize():
    with pytest.raises(DataError):
        split_balanced([AnnotatedEvent(event("a"))], 2)


# -- case base -------------------------------------------------------------

def test_build_case_base_full(tmp_path, synthetic_split):
    _, bank = synthetic_split
    store = build_case_base(bank, MockEmbedder(), tmp_path / "cb.jsonl")
    assert len(store) == 900
    assert all(math.isclose(sum(x * x for x in c.embedding), 1.0, rel_tol=1e-12) for c in store.cases)
    assert CaseStore.load(tmp_path / "cb.jsonl") == store
    assert store.header.embedding_model_id == "mock-embed"


class FlakyEmbedder(MockEmbedder):
    def __init__(self, fail_at):
        super().__init__()
        self.calls, self.fail_at = 0, fail_at

    def __call__(self, text):
        self.calls += 1
        if self.calls == self.fail_at:
            raise TransportError("connection reset")
        return super().__call__(text)


def test_build_resume_gives_identical_digest(tmp_path, synthetic_split):
    _, bank = synthetic_split
    bank = bank[:230]
    clean = build_case_base(bank, MockEmbedder(), tmp_path / "clean.jsonl")
    with pytest.raises(TransportError):
        build_case_base(bank, FlakyEmbedder(fail_at=150), tmp_path / "resumed.jsonl", checkpoint_every=40)
    partial = CaseStore.load(tmp_path / "resumed.jsonl")
    assert len(partial) == 149
    embedder = MockEmbedder()
    resumed = build_case_base(bank, embedder, tmp_path / "resumed.jsonl")
    assert resumed.digest() == clean.digest()


def test_build_requires_values(tmp_path, synthetic_entries):
    e = synthetic_entries[0]
    broken = AnnotatedEvent(e.event, {k: v for k, v in e.values.items() if k != "road_context"})
    with pytest.raises(MissingValueField) as info:
        build_case_base([synthetic_entries[1], broken], MockEmbedder(), tmp_path / "cb.jsonl")
    assert info.value.field == "road_context"
    assert not (tmp_path / "cb.jsonl").exists()


# -- sweep / report / retain ----------------------------------------------

@pytest.fixture(scope="module")
def small_world(tmp_path_factory):
    entries = generate({r: 12 for r in RiskType}, seed=1)
    test, bank = split_balanced(entries, 14, seed=0)
    store = build_case_base(bank, MockEmbedder(), tmp_path_factory.mktemp("w") / "cb.jsonl")
    return test, store


def test_sweep_cell_count_and_cache(tmp_path, small_world):
    test, store = small_world
    sweep = SweepConfig(("m1", "m2"), modes=(PromptMode.RISK_AWARE, PromptMode.RISK_UNAWARE),
                        shot_counts=(1, 3))
    assert len(sweep.cells()) == 2 * 2 * (2 * 2 + 1)
    res = run_sweep(sweep, test, store, MockEmbedder(), lambda m: CaseFollowingChat(), tmp_path)
    assert res.n_ran == 20
    again = run_sweep(sweep, test, store, MockEmbedder(), lambda m: CaseFollowingChat(), tmp_path)
    assert again.n_cached == 20 and again.n_ran == 0
    changed = SweepConfig(("m1", "m2"), modes=(PromptMode.RISK_AWARE, PromptMode.RISK_UNAWARE),
                          shot_counts=(1, 3), seed=9)
    assert run_sweep(changed, test, store, MockEmbedder(), lambda m: CaseFollowingChat(), tmp_path).n_ran == 20


def test_q1_preset_is_single_zero_shot_cell():
    sweep = preset("q1", ["m"])
    cells = sweep.cells()
    assert len(cells) == 1
    assert (cells[0].mode, cells[0].sampling, cells[0].shots) == (PromptMode.RISK_UNAWARE, Sampling.NONE, 0)


def test_sweep_axis_validation():
    with pytest.raises(DataError):
        SweepConfig(())
    with pytest.raises(DataError):
        SweepConfig(("m",), samplings=(), shot_counts=(1,))


def test_failed_cell_does_not_stop_sweep(tmp_path, small_world):
    test, store = small_world
    sweep = SweepConfig(("m",), shot_counts=(1,))
    unembedded = CaseStore("mock-embed")
    unembedded.add(replace(store.cases[0], embedding=None))
    res = run_sweep(sweep, test, store, MockEmbedder(), lambda m: CaseFollowingChat(), tmp_path)
    assert res.n_failed == 0
    with pytest.raises(DataError):
        run_sweep(SweepConfig(("m",), samplings=(Sampling.SIMILARITY,), shot_counts=(1,)),
                  test, unembedded, MockEmbedder(), lambda m: CaseFollowingChat(), tmp_path / "x")

    def chat_for(model):
        if model == "broken":
            raise DataError("model not configured")
        return CaseFollowingChat()

    res = run_sweep(SweepConfig(("broken", "ok"), shot_counts=(1,)), test, store, MockEmbedder(), chat_for,
                    tmp_path / "y")
    assert res.n_failed == 3 and res.n_ran == 3
    rep = report(tmp_path / "y")
    assert len(rep.cells) == 3 and len(rep.missing) == 3


def test_report_empty_run_lists_missing_cells(tmp_path, small_world):
    test, store = small_world
    sweep = SweepConfig(("m",), shot_counts=(1, 3))
    run_sweep(sweep, test, store, MockEmbedder(), lambda m: CaseFollowingChat(), tmp_path)
    for p in tmp_path.glob("cells/*/metrics.json"):
        p.unlink()
    rep = report(tmp_path)
    assert len(rep.missing) == len(sweep.cells()) and not rep.cells
    assert (tmp_path / "report" / "missing.txt").exists()


def test_report_formats_accuracy_and_variances(tmp_path, small_world):
    test, store = small_world
    script = {e.event_id: _gold_reply(e) for e in test}
    run_sweep(SweepConfig(("m",), shot_counts=()), test, store, None,
              lambda m: ScriptedChat(script), tmp_path)
    rep = report(tmp_path)
    assert rep.cells[0][1].maneuver_micro_accuracy == 1.0
    table = rep.tables["overall.txt"]
    assert "1.000" in table and "100.00 (0.00)" in table
    curve = rep.tables["shot_curve.csv"].splitlines()
    assert curve[0] == "model_id,mode,sampling,shots,micro_accuracy" and len(curve) == 2


def test_retain_policies_and_duplicates(tmp_path, small_world, caplog):
    test, store = small_world
    wrong = {test[0].event_id, test[1].event_id}
    script = {e.event_id: (_wrong_reply(e) if e.event_id in wrong else _gold_reply(e)) for e in test}
    res = run_sweep(SweepConfig(("m",), shot_counts=()), test, store, None, lambda m: ScriptedChat(script),
                    tmp_path)
    cell_dir = tmp_path / "cells" / res.cells[0]["key"]
    a = CaseStore(store.header.embedding_model_id, store.dim, store.cases)
    out = retain_from_run(cell_dir, a, test, MockEmbedder(), "correct-only")
    assert (out.before, out.after, len(out.added)) == (len(store), len(store) + 12, 12)
    assert {eid for eid, _ in out.skipped} == wrong
    b = CaseStore(store.header.embedding_model_id, store.dim, store.cases)
    assert len(retain_from_run(cell_dir, b, test, MockEmbedder(), "all").added) == 14
    again = retain_from_run(cell_dir, a, test, MockEmbedder(), "correct-only")
    assert len(again.added) == 12 and len(again.duplicates) == 12
    assert "already in the case base" in caplog.text
    with pytest.raises(DataError):
        retain_from_run(cell_dir, a, test, MockEmbedder(), "some")
