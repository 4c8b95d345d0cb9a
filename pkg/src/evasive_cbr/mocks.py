"""Offline chat models for tests, demos and the ``--mock`` CLI mode."""

from __future__ import annotations

import json
import threading
from collections import Counter
from collections.abc import Callable, Mapping

from .gateway import ChatRequest
from .prompts import event_id_from_prompt, example_values_from_prompt
from .taxonomy import VALUE_FIELDS, EvasiveManeuver


def decision_response(values: Mapping[str, str], prose: bool = True) -> str:
    """A model-style reply: optional prose around a fenced six-key JSON object."""
    body = json.dumps({f: str(values[f]) for f in VALUE_FIELDS}, indent=2, ensure_ascii=False)
    if not prose:
        return body
    return f"Here is my analysis of the event.\n```json\n{body}\n```\n"


class ScriptedChat:
    """Replies looked up by the target event id found in the prompt.

    Script values are reply strings or callables taking the request.
    """

    def __init__(self, script: Mapping[str, str | Callable[[ChatRequest], str]],
                 default: str | None = None):
        self.script = dict(script)
        self.default = default
        self.calls: list[str | None] = []
        self._lock = threading.Lock()

    def __call__(self, req: ChatRequest) -> str:
        eid = event_id_from_prompt(req.user)
        with self._lock:
            self.calls.append(eid)
        reply = self.script.get(eid, self.default)
        if reply is None:
            raise KeyError(f"no scripted reply for event {eid!r}")
        return reply(req) if callable(reply) else reply


class CaseFollowingChat:
    """Copies the majority maneuver of the recalled examples.

    Without examples it falls back to ``default_maneuver``. Text fields are
    borrowed from the first example, or a fixed sentence at zero shots. This
    is a stand-in that rewards relevant retrieval, nothing more.
    """

    def __init__(self, default_maneuver: EvasiveManeuver = EvasiveManeuver.EMERGENCY_BRAKING):
        self.default_maneuver = default_maneuver

    def __call__(self, req: ChatRequest) -> str:
        text = req.system + "\n\n" + req.user
        examples = example_values_from_prompt(text)
        if examples:
            votes = Counter(e["ego_car_evasive_maneuver"] for e in examples)
            # Ties go to the higher-ranked example.
            best = max(votes.values())
            maneuver = next(e["ego_car_evasive_maneuver"] for e in examples
                            if votes[e["ego_car_evasive_maneuver"]] == best)
            values = dict(examples[0], ego_car_evasive_maneuver=maneuver)
        else:
            filler = "The ego car faces a developing conflict with another road user."
            values = {f: filler for f in VALUE_FIELDS}
            values["ego_car_evasive_maneuver"] = self.default_maneuver.value
            values["ego_car_maneuver_justification"] = (
                f"{self.default_maneuver.value} is the most conservative response when the "
                "other party's intent is unclear."
            )
        return decision_response(values)
