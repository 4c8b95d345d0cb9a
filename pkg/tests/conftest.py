from __future__ import annotations

import random
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from evasive_cbr.casebase import Case, CaseStore, Provenance
from evasive_cbr.experiment import Dataset, split_balanced
from evasive_cbr.gateway import MockEmbedder
from evasive_cbr.synthetic import generate
from evasive_cbr.taxonomy import AnnotatedEvent, EvasiveManeuver, RiskType, ScdsEvent

RISKS = list(RiskType)
MANEUVERS = list(EvasiveManeuver)

CAPTION = ("The ego car drives along a wet two-lane road at dusk when another car ahead "
           "suddenly slows and the gap closes within a second.")


def make_case(case_id: str, risk_type: RiskType, embedding=None, maneuver=EvasiveManeuver.EMERGENCY_BRAKING,
              caption: str = CAPTION, source: str | None = None) -> Case:
    return Case(
        case_id=case_id, risk_type=risk_type, caption=caption,
        road_context="Wet two-lane road at dusk.", other_car_position="Directly ahead.",
        other_car_action="Slows down sharply.", event_context="The gap to the lead car closes fast.",
        ego_car_evasive_maneuver=maneuver, ego_car_maneuver_justification="Braking keeps a safe gap.",
        embedding=None if embedding is None else tuple(embedding),
        provenance=Provenance(source or f"src-{case_id}", "2024-01-01T00:00:00+00:00"),
    )


def random_store(rng: random.Random, n: int, dim: int, dup_rate: float = 0.1) -> CaseStore:
    """Random store over all seven types; some embeddings are exact copies to force ties."""
    nrng = np.random.default_rng(rng.randrange(2**32))
    store = CaseStore("test-embed")
    made: list[tuple[float, ...]] = []
    ids = [f"c{i:05d}" for i in range(n)]
    rng.shuffle(ids)  # insertion order differs from id order
    for cid in ids:
        if made and rng.random() < dup_rate:
            emb = rng.choice(made)
        else:
            emb = tuple(float(x) for x in nrng.normal(size=dim))
            made.append(emb)
        store.add(make_case(cid, rng.choice(RISKS), emb))
    return store


def event(event_id: str, risk_type=RiskType.CONFLICT_WITH_VEHICLE_AHEAD,
          maneuver=EvasiveManeuver.EMERGENCY_BRAKING, caption: str = CAPTION) -> ScdsEvent:
    return ScdsEvent(event_id, caption, risk_type, maneuver)


@pytest.fixture(scope="session")
def synthetic_entries() -> list[AnnotatedEvent]:
    return generate()


@pytest.fixture(scope="session")
def synthetic_split(synthetic_entries):
    return split_balanced(Dataset(synthetic_entries), 100, seed=0)


@pytest.fixture
def mock_embed():
    return MockEmbedder()


@pytest.fixture(scope="session")
def fourteen_events(synthetic_entries) -> list[ScdsEvent]:
    """Two events per risk type."""
    out = []
    for rt in RISKS:
        out += [e.event for e in synthetic_entries if e.event.risk_type is rt][:2]
    return out


# -- acceptance summary ----------------------------------------------------
# Tests marked ``@pytest.mark.acceptance(n, title)`` get one PASS/FAIL/SKIP
# line each at the end of the session.

_ACCEPTANCE: dict[int, tuple[str, str, float]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    n, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _ACCEPTANCE[n] = (title, rep.outcome, rep.duration)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, outcome, dur = _ACCEPTANCE[n]
        word = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[outcome]
        terminalreporter.write_line(f"criterion {n}: {word:4} ({dur:6.2f} s)  {title}")
