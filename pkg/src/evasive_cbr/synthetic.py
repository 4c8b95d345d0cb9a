"""Synthetic near-miss events shaped like the real annotated dataset.

Counts default to 143 events per risk type (142 for pedestrians), 1000 in
total. Captions are assembled from phrase pools and never contain a risk-type
or maneuver label, so prompt leak checks stay meaningful.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .taxonomy import AnnotatedEvent, EvasiveManeuver as M, RiskType as R, ScdsEvent

DEFAULT_COUNTS = {r: (142 if r is R.CONFLICT_WITH_PEDESTRIAN else 143) for r in R}

ROADS = [
    "a two-lane urban street lined with shops",
    "a wide arterial road with three lanes in each direction",
    "a narrow residential road with parked cars on both sides",
    "a suburban road approaching a signalized intersection",
    "an expressway section near an interchange",
    "a rural road bordered by rice fields",
    "a busy downtown avenue with heavy traffic",
]
CONDITIONS = [
    "in clear daylight", "under overcast skies", "at night under street lights",
    "in light rain with wet pavement", "at dusk with low sun glare", "in snowfall with slushy lanes",
]
SPEEDS = ["about 30 km/h", "about 40 km/h", "roughly 50 km/h", "close to 60 km/h", "a moderate speed"]


@dataclass(frozen=True)
class Scenario:
    position: str
    action: str
    trigger: str
    maneuver: M
    reason: str


SCENARIOS: dict[R, list[Scenario]] = {
    R.CONFLICT_WITH_VEHICLE_AHEAD: [
        Scenario("directly ahead in the same lane", "decelerates sharply and comes to a stop",
                 "The car directly in front suddenly slows down hard and stops, and the gap to the ego car shrinks within a second.",
                 M.EMERGENCY_BRAKING, "stopping in lane is the only way to keep a safe distance when adjacent lanes are occupied"),
        Scenario("ahead in the same lane with the right lane clear", "brakes abruptly for a queue",
                 "The lead car brakes abruptly for a queue while the lane on the right side is empty.",
                 M.EMERGENCY_BRAKING_AND_EVASIVE_STEERING_RIGHT, "braking sheds speed while the clear right lane offers an escape path"),
        Scenario("ahead in the same lane with the left lane clear", "stops unexpectedly to turn",
                 "The lead car stops unexpectedly to wait for a turn while the lane on the left side is empty.",
                 M.EMERGENCY_BRAKING_AND_EVASIVE_STEERING_LEFT, "braking sheds speed while the clear left lane offers an escape path"),
    ],
    R.CONFLICT_WITH_PEDESTRIAN: [
        Scenario("on the right roadside between parked cars", "steps into the lane from the right",
                 "A person on foot emerges from between parked cars on the right and walks into the lane without looking.",
                 M.EMERGENCY_BRAKING_AND_EVASIVE_STEERING_LEFT, "braking while moving left increases the distance from the person emerging on the right"),
        Scenario("on the left sidewalk near a crossing", "runs across from the left",
                 "A person on foot runs across the road from the left sidewalk outside the crosswalk.",
                 M.EMERGENCY_BRAKING_AND_EVASIVE_STEERING_RIGHT, "braking while moving right keeps clear of the person crossing from the left"),
        Scenario("standing in the lane ahead", "stands still in the travel lane",
                 "A person on foot stands still in the travel lane ahead, partly hidden by the glare.",
                 M.EMERGENCY_BRAKING, "a straight stop avoids swerving into unpredictable movement by the person"),
    ],
    R.CONFLICT_WITH_ADJACENT_VEHICLE: [
        Scenario("in the left adjacent lane slightly ahead", "drifts toward the ego lane from the left",
                 "A car in the left lane drifts across the lane marking toward the ego car without signalling.",
                 M.EMERGENCY_BRAKING_AND_EVASIVE_STEERING_RIGHT, "slowing and moving right opens lateral space from the intruding car on the left"),
        Scenario("in the right adjacent lane alongside", "squeezes toward the ego lane from the right",
                 "A car in the right lane squeezes toward the ego car while changing lanes.",
                 M.EMERGENCY_BRAKING_AND_EVASIVE_STEERING_LEFT, "slowing and moving left opens lateral space from the intruding car on the right"),
        Scenario("in the right adjacent lane slightly behind", "swerves toward the ego lane from behind on the right",
                 "A car behind on the right swerves toward the ego car's rear quarter.",
                 M.EVASIVE_STEERING_LEFT, "a small move left avoids the side contact without inviting a rear impact"),
    ],
    R.CONFLICT_WITH_MERGING_VEHICLE: [
        Scenario("on the on-ramp to the right", "merges into the lane just ahead",
                 "A car from the ramp on the right merges into the lane just ahead of the ego car.",
                 M.EMERGENCY_BRAKING, "slowing down lets the merging car in ahead with a safe gap"),
        Scenario("pulling out of a parking lot on the left", "pulls out into the lane ahead",
                 "A car pulls out of a parking lot on the left into the lane in front of the ego car.",
                 M.EMERGENCY_BRAKING_AND_EVASIVE_STEERING_RIGHT, "braking and moving right avoids the car entering from the left"),
        Scenario("merging from behind on the right", "accelerates to cut in from behind",
                 "A car merging from behind on the right accelerates to cut in beside the ego car.",
                 M.SUDDEN_ACCELERATION, "speeding up clears the merge point before the other car arrives"),
    ],
    R.CONFLICT_WITH_ONCOMING_VEHICLE: [
        Scenario("oncoming across the center line", "crosses the center line while overtaking",
                 "An oncoming car overtakes a truck and crosses the center line into the ego lane.",
                 M.EMERGENCY_BRAKING_AND_EVASIVE_STEERING_RIGHT, "slowing and moving toward the roadside gives the overtaking car room to return"),
        Scenario("oncoming on a narrow road", "cuts the curve into the ego lane",
                 "On a narrow curve an oncoming car cuts the corner and occupies part of the ego lane.",
                 M.EVASIVE_STEERING_RIGHT, "a move toward the outer edge keeps clearance without a hard stop on the curve"),
        Scenario("oncoming and swerving around an obstacle", "swerves around a parked truck into the ego lane",
                 "An oncoming car swerves around a parked truck and heads into the ego lane.",
                 M.EMERGENCY_BRAKING, "stopping gives the oncoming car space to complete its swerve"),
    ],
    R.HEAD_ON_CONFLICT: [
        Scenario("approaching from the right at the intersection", "enters the intersection from the right, partly hidden",
                 "At the intersection a car appears from the right, partially obscured by a wall, and enters the crossing.",
                 M.EMERGENCY_BRAKING, "stopping before the crossing avoids a frontal impact with the car entering from the right"),
        Scenario("approaching from the left at the intersection", "runs the stop line from the left",
                 "At the intersection a car from the left runs the stop line and moves into the ego car's path.",
                 M.EMERGENCY_BRAKING_AND_EVASIVE_STEERING_RIGHT, "braking and moving right lets the car from the left pass in front"),
        Scenario("reversing out of a driveway in front", "backs out directly into the ego path",
                 "A car backs out of a driveway directly into the ego car's path.",
                 M.EMERGENCY_BRAKING, "a straight stop is safest when the other car's direction is uncertain"),
    ],
    R.CONFLICT_WITH_OPPOSITE_TURNING_VEHICLE: [
        Scenario("opposite direction waiting to turn", "turns across the ego path at the intersection",
                 "An oncoming car waiting at the intersection starts turning across the ego car's path.",
                 M.EMERGENCY_BRAKING, "stopping lets the turning car clear the ego path"),
        Scenario("opposite direction turning late", "cuts the turn into the near side of the ego lane",
                 "An oncoming car cuts its turn short and sweeps across the left part of the ego lane.",
                 M.EMERGENCY_BRAKING_AND_EVASIVE_STEERING_RIGHT, "braking and moving right avoids the car sweeping across on the left"),
        Scenario("opposite direction turning slowly behind the ego car's front", "starts the turn as the ego car is already in the crossing",
                 "An oncoming car begins its turn as the ego car is already inside the crossing.",
                 M.ACCELERATION_AND_EVASIVE_STEERING_LEFT, "clearing the crossing quickly and moving left escapes the turning path"),
    ],
}

SHORT_RISKS = {R.CONFLICT_WITH_MERGING_VEHICLE}


def _caption(rng: random.Random, rt: R, sc: Scenario, road: str, cond: str, speed: str) -> str:
    lead = f"The ego car travels on {road} {cond} at {speed}."
    extra = [
        "Traffic around the ego car is moderate and the driver appears attentive.",
        "Several vehicles are parked along the curb and visibility to the sides is limited.",
        "The road surface is marked with faded lane lines and a bus stop is visible ahead.",
        "A cyclist rides along the left edge and a delivery van is stopped further ahead.",
        "The traffic signal ahead has just turned green and vehicles are starting to move.",
    ]
    parts = [lead, sc.trigger]
    if rt not in SHORT_RISKS:
        parts += rng.sample(extra, rng.randint(1, 3))
    parts.append("The situation develops within about two seconds before the trigger point.")
    text = " ".join(parts)
    return text


def generate(n_per_type: dict[R, int] | None = None, seed: int = 7) -> list[AnnotatedEvent]:
    counts = DEFAULT_COUNTS if n_per_type is None else n_per_type
    rng = random.Random(seed)
    out: list[AnnotatedEvent] = []
    idx = 0
    for rt in R:
        for _ in range(counts.get(rt, 0)):
            idx += 1
            sc = rng.choice(SCENARIOS[rt])
            road, cond, speed = rng.choice(ROADS), rng.choice(CONDITIONS), rng.choice(SPEEDS)
            caption = _caption(rng, rt, sc, road, cond, speed)
            ev = ScdsEvent(f"evt-{idx:04d}", caption, rt, sc.maneuver)
            values = {
                "road_context": f"The ego car is on {road} {cond}, travelling at {speed}.",
                "other_car_position": f"The other road user is {sc.position}.",
                "other_car_action": f"It {sc.action}.",
                "event_context": f"{sc.trigger} A collision becomes likely unless the ego car reacts.",
                "ego_car_maneuver_justification": f"The maneuver is recommended because {sc.reason}.",
            }
            out.append(AnnotatedEvent(ev, values))
    # Interleave types so file order is not grouped by risk type.
    rng.shuffle(out)
    return out
