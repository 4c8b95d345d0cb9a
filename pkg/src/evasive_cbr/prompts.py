"""Three-part prompt assembly: system prompt, target task, recalled examples.

Wording lives in ``templates/<version>/*.txt``. ``PromptConfig.template_dir``
points at a directory whose files replace the shipped ones by name, which is
how alternate phrasings are tried without touching code.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from collections.abc import Sequence
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from string import Template

from .casebase import Case
from .errors import DataError, ShotMismatch
from .gateway import ChatRequest, Message
from .taxonomy import VALUE_FIELDS, PromptMode, ScdsEvent

log = logging.getLogger(__name__)

TEMPLATE_VERSION = "v1"
CANONICAL_SHOTS = (0, 1, 3, 5)
TEMPLATE_NAMES = ("system", "reasoning", "task", "examples_intro", "example")


@dataclass(frozen=True)
class PromptConfig:
    mode: PromptMode = PromptMode.RISK_UNAWARE
    shots: int = 0
    include_cot: bool = True
    # "user": examples precede the task in the user message; "system": they
    # are appended to the system message.
    example_placement: str = "user"
    template_dir: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", PromptMode(self.mode))
        if self.shots < 0:
            raise DataError("shots must be >= 0")
        if self.example_placement not in ("user", "system"):
            raise DataError(f"unknown example_placement {self.example_placement!r}")

    @property
    def canonical(self) -> bool:
        return self.shots in CANONICAL_SHOTS


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    user_text: str
    task_text: str
    example_blocks: tuple[str, ...]

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.system_text.encode())
        h.update(b"\x00")
        h.update(self.user_text.encode())
        return h.hexdigest()


def load_templates(template_dir: str | None = None, version: str = TEMPLATE_VERSION) -> dict[str, str]:
    base = resources.files("evasive_cbr") / "templates" / version
    out = {name: (base / f"{name}.txt").read_text(encoding="utf-8") for name in TEMPLATE_NAMES}
    if template_dir:
        for name in TEMPLATE_NAMES:
            p = Path(template_dir) / f"{name}.txt"
            if p.exists():
                out[name] = p.read_text(encoding="utf-8")
    return out


_DEFAULT_TEMPLATES = load_templates()


def _templates(template_dir: str | None) -> dict[str, str]:
    return load_templates(template_dir) if template_dir else _DEFAULT_TEMPLATES


def build_system_prompt(include_cot: bool = True, template_dir: str | None = None) -> str:
    t = _templates(template_dir)
    return Template(t["system"]).substitute(reasoning=t["reasoning"] if include_cot else "").rstrip("\n")


def build_task_prompt(event: ScdsEvent, mode: PromptMode, template_dir: str | None = None) -> str:
    lines = _templates(template_dir)["task"].splitlines()
    if PromptMode(mode) is PromptMode.RISK_UNAWARE:
        # The whole line goes, so both modes differ by exactly one line.
        lines = [ln for ln in lines if ln.strip() != "$risk_line"]
    return Template("\n".join(lines)).substitute(
        event_id=event.event_id,
        caption=event.caption,
        risk_line=f"Risk type: {event.risk_type.value}",
    ).rstrip("\n")


def render_example(case: Case, index: int, template_dir: str | None = None) -> str:
    t = _templates(template_dir)
    analysis = json.dumps(case.values(), indent=2, ensure_ascii=False)
    return Template(t["example"]).substitute(index=index, caption=case.caption, analysis=analysis).rstrip("\n")


def render_examples(cases: Sequence[Case], template_dir: str | None = None) -> list[str]:
    return [render_example(c, i, template_dir) for i, c in enumerate(cases, start=1)]


def assemble(cfg: PromptConfig, event: ScdsEvent, cases: Sequence[Case], model_id: str = "",
             temperature: float = 0.0, max_tokens: int = 1024) -> tuple[PromptBundle, ChatRequest]:
    if len(cases) != cfg.shots:
        raise ShotMismatch(f"prompt expects {cfg.shots} example cases, got {len(cases)}")
    if not cfg.canonical:
        log.warning("non-canonical shot count %d (sweeps use %s)", cfg.shots, CANONICAL_SHOTS)
    t = _templates(cfg.template_dir)
    system = build_system_prompt(cfg.include_cot, cfg.template_dir)
    task = build_task_prompt(event, cfg.mode, cfg.template_dir)
    blocks = render_examples(cases, cfg.template_dir)
    if blocks:
        examples = "\n\n".join([t["examples_intro"].rstrip("\n"), *blocks])
        if cfg.example_placement == "system":
            system = f"{system}\n\n{examples}"
            user = task
        else:
            user = f"{examples}\n\n{task}"
    else:
        user = task
    bundle = PromptBundle(system, user, task, tuple(blocks))
    req = ChatRequest(
        model_id=model_id,
        messages=(Message("system", system), Message("user", user)),
        temperature=temperature,
        max_tokens=max_tokens,
    )
    return bundle, req


_EVENT_ID = re.compile(r"^Event ID: (.+)$", re.MULTILINE)
_EXAMPLE_ANALYSIS = re.compile(r"^Analysis:\n(\{.*?^\})", re.MULTILINE | re.DOTALL)


def event_id_from_prompt(user_text: str) -> str | None:
    """Event id of the target event (the last ``Event ID:`` line)."""
    found = _EVENT_ID.findall(user_text)
    return found[-1].strip() if found else None


def example_values_from_prompt(text: str) -> list[dict]:
    """Parse the analysis objects of rendered example blocks back out of a prompt."""
    out = []
    for chunk in _EXAMPLE_ANALYSIS.findall(text):
        try:
            obj = json.loads(chunk)
        except ValueError:
            continue
        if isinstance(obj, dict) and all(k in obj for k in VALUE_FIELDS):
            out.append(obj)
    return out
