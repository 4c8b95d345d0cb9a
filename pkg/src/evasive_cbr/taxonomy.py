"""Closed driving-risk vocabulary and the records exchanged between modules.

Labels are wire-format: the enum *values* are the canonical display strings
and appear verbatim in case-base files, datasets, prompts and model output.
"""

from __future__ import annotations

import enum
import re
from dataclasses import asdict, dataclass, field

from .errors import DataError, UnknownManeuver, UnknownRiskType

_WS = re.compile(r"\s+")


def normalize_label(label: str) -> str:
    """Lowercase, trim and collapse internal whitespace."""
    return _WS.sub(" ", label.strip()).lower()


class _Label(str, enum.Enum):
    def __str__(self) -> str:
        return self.value

    @property
    def display(self) -> str:
        return self.value


class RiskType(_Label):
    CONFLICT_WITH_VEHICLE_AHEAD = "Conflict with Vehicle Ahead"
    CONFLICT_WITH_PEDESTRIAN = "Conflict with Pedestrian"
    CONFLICT_WITH_ADJACENT_VEHICLE = "Conflict with Adjacent Vehicle"
    CONFLICT_WITH_MERGING_VEHICLE = "Conflict with Merging Vehicle"
    CONFLICT_WITH_ONCOMING_VEHICLE = "Conflict with Oncoming Vehicle"
    HEAD_ON_CONFLICT = "Head-on Conflict"
    CONFLICT_WITH_OPPOSITE_TURNING_VEHICLE = "Conflict with Opposite Turning Vehicle"


class EvasiveManeuver(_Label):
    EMERGENCY_BRAKING = "Emergency Braking"
    EVASIVE_STEERING_LEFT = "Evasive Steering Left"
    EVASIVE_STEERING_RIGHT = "Evasive Steering Right"
    SUDDEN_ACCELERATION = "Sudden Acceleration"
    EMERGENCY_BRAKING_AND_EVASIVE_STEERING_LEFT = "Emergency Braking and Evasive Steering Left"
    EMERGENCY_BRAKING_AND_EVASIVE_STEERING_RIGHT = "Emergency Braking and Evasive Steering Right"
    ACCELERATION_AND_EVASIVE_STEERING_LEFT = "Acceleration and Evasive Steering Left"
    ACCELERATION_AND_EVASIVE_STEERING_RIGHT = "Acceleration and Evasive Steering Right"


_RISK_LOOKUP = {normalize_label(r.value): r for r in RiskType}
_MANEUVER_LOOKUP = {normalize_label(m.value): m for m in EvasiveManeuver}


def parse_risk_type(label: str) -> RiskType:
    if isinstance(label, RiskType):
        return label
    if not isinstance(label, str):
        raise UnknownRiskType(repr(label))
    try:
        return _RISK_LOOKUP[normalize_label(label)]
    except KeyError:
        raise UnknownRiskType(label) from None


def parse_maneuver(label: str) -> EvasiveManeuver:
    if isinstance(label, EvasiveManeuver):
        return label
    if not isinstance(label, str):
        raise UnknownManeuver(repr(label))
    try:
        return _MANEUVER_LOOKUP[normalize_label(label)]
    except KeyError:
        raise UnknownManeuver(label) from None


def display(value: RiskType | EvasiveManeuver) -> str:
    return value.value


class PromptMode(_Label):
    RISK_AWARE = "RiskAware"
    RISK_UNAWARE = "RiskUnaware"


class Sampling(_Label):
    SIMILARITY = "Similarity"
    RANDOM = "Random"
    NONE = "None"


# The six analysis fields shared by case values and model decisions, in the
# order they are rendered and requested.
VALUE_FIELDS: tuple[str, ...] = (
    "road_context",
    "other_car_position",
    "other_car_action",
    "event_context",
    "ego_car_evasive_maneuver",
    "ego_car_maneuver_justification",
)
TEXT_VALUE_FIELDS = tuple(f for f in VALUE_FIELDS if f != "ego_car_evasive_maneuver")

CAPTION_BAND = (100, 1000)


@dataclass(frozen=True)
class ScdsEvent:
    """One annotated near-miss event."""

    event_id: str
    caption: str
    risk_type: RiskType
    ground_truth_maneuver: EvasiveManeuver

    def __post_init__(self):
        if not self.event_id:
            raise DataError("event_id must be nonempty")
        if not self.caption:
            raise DataError(f"event {self.event_id!r}: caption must be nonempty")
        object.__setattr__(self, "risk_type", parse_risk_type(self.risk_type))
        object.__setattr__(self, "ground_truth_maneuver", parse_maneuver(self.ground_truth_maneuver))

    @property
    def caption_in_band(self) -> bool:
        lo, hi = CAPTION_BAND
        return lo <= len(self.caption) <= hi


@dataclass(frozen=True)
class RunMeta:
    model_id: str
    prompt_mode: PromptMode
    sampling: Sampling
    shots: int
    retrieved_case_ids: tuple[str, ...] = ()
    seed: int = 0
    latency_ms: int = 0

    def __post_init__(self):
        object.__setattr__(self, "prompt_mode", PromptMode(self.prompt_mode))
        object.__setattr__(self, "sampling", Sampling(self.sampling))
        object.__setattr__(self, "retrieved_case_ids", tuple(self.retrieved_case_ids))
        if self.shots < 0 or self.latency_ms < 0:
            raise DataError("shots and latency_ms must be >= 0")
        if self.shots != len(self.retrieved_case_ids):
            raise DataError(
                f"shots={self.shots} but {len(self.retrieved_case_ids)} retrieved case ids"
            )
        if (self.sampling is Sampling.NONE) != (self.shots == 0):
            raise DataError("sampling must be None exactly when shots == 0")

    def to_dict(self, include_timing: bool = True) -> dict:
        d = {
            "model_id": self.model_id,
            "prompt_mode": self.prompt_mode.value,
            "sampling": self.sampling.value,
            "shots": self.shots,
            "retrieved_case_ids": list(self.retrieved_case_ids),
            "seed": self.seed,
        }
        if include_timing:
            d["latency_ms"] = self.latency_ms
        return d

    @classmethod
    def from_dict(cls, d: dict) -> RunMeta:
        return cls(
            model_id=d["model_id"],
            prompt_mode=d["prompt_mode"],
            sampling=d["sampling"],
            shots=d["shots"],
            retrieved_case_ids=tuple(d.get("retrieved_case_ids", ())),
            seed=d.get("seed", 0),
            latency_ms=d.get("latency_ms", 0),
        )


@dataclass(frozen=True)
class Decision:
    """Structured model output for one event."""

    event_id: str
    road_context: str
    other_car_position: str
    other_car_action: str
    event_context: str
    ego_car_evasive_maneuver: EvasiveManeuver
    ego_car_maneuver_justification: str
    raw_response: str = ""
    meta: RunMeta | None = field(default=None, compare=True)

    def __post_init__(self):
        object.__setattr__(self, "ego_car_evasive_maneuver", parse_maneuver(self.ego_car_evasive_maneuver))

    @property
    def valid(self) -> bool:
        return all(getattr(self, f).strip() for f in TEXT_VALUE_FIELDS)

    def values(self) -> dict[str, str]:
        return {f: str(getattr(self, f)) for f in VALUE_FIELDS}

    def to_dict(self, include_timing: bool = True) -> dict:
        d = {"event_id": self.event_id, **self.values(), "raw_response": self.raw_response}
        d["meta"] = self.meta.to_dict(include_timing) if self.meta else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Decision:
        meta = RunMeta.from_dict(d["meta"]) if d.get("meta") else None
        return cls(
            event_id=d["event_id"],
            **{f: d[f] for f in VALUE_FIELDS},
            raw_response=d.get("raw_response", ""),
            meta=meta,
        )


@dataclass(frozen=True)
class AnnotatedEvent:
    """An event plus the expert case values (the five text fields).

    ``values`` is None for events that only carry the key and ground truth.
    The maneuver value is the event's ground-truth maneuver.
    """

    event: ScdsEvent
    values: dict[str, str] | None = None

    @property
    def event_id(self) -> str:
        return self.event.event_id

    def case_values(self) -> dict[str, str] | None:
        if self.values is None:
            return None
        return {**self.values, "ego_car_evasive_maneuver": self.event.ground_truth_maneuver.value}


def event_to_dict(event: ScdsEvent) -> dict:
    d = asdict(event)
    d["risk_type"] = event.risk_type.value
    d["ground_truth_maneuver"] = event.ground_truth_maneuver.value
    return d
