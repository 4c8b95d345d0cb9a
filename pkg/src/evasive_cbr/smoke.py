"""Seven-event smoke suite for a live chat + embedding endpoint.

One event per risk type. The case base is a small synthetic one embedded with
the live embedding model, and each event is run 1-shot with similarity
recall, risk-aware. Accuracy is reported, never asserted.
"""

from __future__ import annotations

from dataclasses import dataclass

from .casebase import CaseStore
from .gateway import GatewayConfig, HttpChat, HttpEmbedder
from .metrics import micro_accuracy
from .pipeline import RunConfig, RunRecord, run_batch
from .prompts import PromptConfig
from .synthetic import generate
from .taxonomy import Decision, EvasiveManeuver as M, PromptMode, RiskType as R, Sampling, ScdsEvent

SMOKE_EVENTS = [
    ScdsEvent("smoke-ahead", "The ego car follows a white van on a city street in daylight. The van brakes "
              "hard for a cat crossing the road and the distance to it shrinks quickly.", R.CONFLICT_WITH_VEHICLE_AHEAD,
              M.EMERGENCY_BRAKING),
    ScdsEvent("smoke-pedestrian", "At night on a narrow residential street, a man in dark clothes steps out from "
              "behind a parked truck on the right side directly into the ego car's lane.",
              R.CONFLICT_WITH_PEDESTRIAN, M.EMERGENCY_BRAKING_AND_EVASIVE_STEERING_LEFT),
    # adjacent-lane intrusion from the left on a multi-lane road
    ScdsEvent("smoke-adjacent", "The ego car drives in the middle lane of a three-lane arterial road. A silver "
              "sedan in the left lane starts changing lanes without signalling and moves toward the ego car's "
              "front left corner while the right lane is free.", R.CONFLICT_WITH_ADJACENT_VEHICLE,
              M.EMERGENCY_BRAKING_AND_EVASIVE_STEERING_RIGHT),
    ScdsEvent("smoke-merging", "On an expressway near an interchange, a small car from the on-ramp on the right "
              "merges into the ego lane only a few meters ahead without yielding.",
              R.CONFLICT_WITH_MERGING_VEHICLE, M.EMERGENCY_BRAKING),
    ScdsEvent("smoke-oncoming", "On a two-lane rural road an oncoming car overtakes a slow tractor and moves into "
              "the ego car's lane, heading toward it at speed.", R.CONFLICT_WITH_ONCOMING_VEHICLE,
              M.EMERGENCY_BRAKING_AND_EVASIVE_STEERING_RIGHT),
    # crossing traffic appearing late from behind an obstruction at an intersection
    ScdsEvent("smoke-headon", "The ego car approaches an unsignalized intersection in a residential area. A "
              "wall blocks the view to the right, and a compact car suddenly emerges from the right and enters "
              "the crossing in front of the ego car.", R.HEAD_ON_CONFLICT, M.EMERGENCY_BRAKING),
    ScdsEvent("smoke-turning", "At a signalized intersection the ego car proceeds straight on green. An oncoming "
              "car waiting to turn starts its turn across the ego car's path.",
              R.CONFLICT_WITH_OPPOSITE_TURNING_VEHICLE, M.EMERGENCY_BRAKING),
]


@dataclass
class SmokeResult:
    records: list[RunRecord]
    accuracy: float

    @property
    def all_valid(self) -> bool:
        return all(r.ok and r.decision.valid and isinstance(r.decision.ego_car_evasive_maneuver, M)
                   for r in self.records)


def run_smoke(gateway: GatewayConfig, chat_model: str, embed_model: str, cases_per_type: int = 3,
              shots: int = 1) -> SmokeResult:
    embedder = HttpEmbedder(gateway, embed_model)
    chat = HttpChat(gateway)
    try:
        store = CaseStore(embed_model)
        for entry in generate({r: cases_per_type for r in R}, seed=11):
            decision = Decision(entry.event_id, **entry.case_values())
            store.retain(entry.event, decision, embedder(entry.event.caption))
        cfg = RunConfig(chat_model, PromptConfig(PromptMode.RISK_AWARE, shots),
                        Sampling.SIMILARITY if shots else Sampling.NONE, gateway=gateway)
        records, _ = run_batch(cfg, store, SMOKE_EVENTS, embedder, chat)
    finally:
        embedder.close()
        chat.close()
    acc = micro_accuracy([r.decision.ego_car_evasive_maneuver if r.ok else None for r in records],
                         [e.ground_truth_maneuver for e in SMOKE_EVENTS])
    return SmokeResult(records, acc)

