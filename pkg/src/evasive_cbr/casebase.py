"""Persistent, append-only store of resolved driving cases.

File layout (JSON lines): a header object on line 1, then one case per line::

    {"format_version": 1, "embedding_model_id": "...", "embedding_dim": 768}
    {"case_id": "...", "risk_type": "Head-on Conflict", "caption": "...", ...,
     "embedding": [0.01, ...] | null,
     "provenance": {"source_event_id": "...", "created_at": "2025-01-01T00:00:00+00:00"}}

Floats are written with ``repr`` precision, so a save/load round trip is
bit-exact.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
import threading
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import (
    DataError,
    DimensionMismatch,
    DuplicateCaseId,
    InvalidDecision,
    ParseError,
)
from .taxonomy import (
    TEXT_VALUE_FIELDS,
    VALUE_FIELDS,
    Decision,
    EvasiveManeuver,
    RiskType,
    ScdsEvent,
    parse_maneuver,
    parse_risk_type,
)

FORMAT_VERSION = 1
DIGEST_ALGORITHM = "sha256"


@dataclass(frozen=True)
class Provenance:
    source_event_id: str
    created_at: str


@dataclass(frozen=True)
class Case:
    case_id: str
    risk_type: RiskType
    caption: str
    road_context: str
    other_car_position: str
    other_car_action: str
    event_context: str
    ego_car_evasive_maneuver: EvasiveManeuver
    ego_car_maneuver_justification: str
    embedding: tuple[float, ...] | None
    provenance: Provenance

    def __post_init__(self):
        object.__setattr__(self, "risk_type", parse_risk_type(self.risk_type))
        object.__setattr__(self, "ego_car_evasive_maneuver", parse_maneuver(self.ego_car_evasive_maneuver))
        if self.embedding is not None:
            emb = tuple(float(x) for x in self.embedding)
            if not all(math.isfinite(x) for x in emb):
                raise DataError(f"case {self.case_id!r}: non-finite embedding component")
            object.__setattr__(self, "embedding", emb)
        for f in TEXT_VALUE_FIELDS:
            if not str(getattr(self, f)).strip():
                raise InvalidDecision(f"case {self.case_id!r}: value field {f!r} is empty")

    def values(self) -> dict[str, str]:
        return {f: str(getattr(self, f)) for f in VALUE_FIELDS}

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "risk_type": self.risk_type.value,
            "caption": self.caption,
            **self.values(),
            "embedding": list(self.embedding) if self.embedding is not None else None,
            "provenance": {
                "source_event_id": self.provenance.source_event_id,
                "created_at": self.provenance.created_at,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> Case:
        prov = d.get("provenance") or {}
        emb = d.get("embedding")
        return cls(
            case_id=str(d["case_id"]),
            risk_type=d["risk_type"],
            caption=d["caption"],
            **{f: d[f] for f in VALUE_FIELDS},
            embedding=tuple(emb) if emb is not None else None,
            provenance=Provenance(str(prov.get("source_event_id", "")), str(prov.get("created_at", ""))),
        )


@dataclass(frozen=True)
class StoreHeader:
    embedding_model_id: str = ""
    embedding_dim: int | None = None

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "embedding_model_id": self.embedding_model_id,
            "embedding_dim": self.embedding_dim,
        }


def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class CaseBaseView:
    """Immutable snapshot of a store. Retrieval only ever reads one of these."""

    def __init__(self, header: StoreHeader, cases: Sequence[Case]):
        self.header = header
        self.cases: tuple[Case, ...] = tuple(cases)
        self._by_id = {c.case_id: c for c in self.cases}
        index: dict[RiskType, list[str]] = {r: [] for r in RiskType}
        for c in self.cases:
            index[c.risk_type].append(c.case_id)
        self.index: dict[RiskType, tuple[str, ...]] = {r: tuple(ids) for r, ids in index.items()}
        self._matrices: dict[RiskType, np.ndarray] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.cases)

    def __getitem__(self, case_id: str) -> Case:
        return self._by_id[case_id]

    def __contains__(self, case_id: str) -> bool:
        return case_id in self._by_id

    @property
    def dim(self) -> int | None:
        return self.header.embedding_dim

    def partition(self, risk_type: RiskType) -> tuple[Case, ...]:
        return tuple(self._by_id[i] for i in self.index[risk_type])

    def matrix(self, risk_type: RiskType) -> np.ndarray:
        """Stacked embeddings of one partition (rows in insertion order).

        Callers must have checked that every case in the partition is embedded.
        """
        with self._lock:
            m = self._matrices.get(risk_type)
            if m is None:
                rows = [self._by_id[i].embedding for i in self.index[risk_type]]
                dim = self.dim or 0
                m = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
                m.setflags(write=False)
                self._matrices[risk_type] = m
            return m

    def digest(self) -> str:
        return store_digest(self.header, self.cases)


def store_digest(header: StoreHeader, cases: Iterable[Case]) -> str:
    """Content hash of a store, ignoring wall-clock ``created_at`` stamps."""
    h = hashlib.sha256()
    h.update(json.dumps(header.to_dict(), sort_keys=True).encode())
    for c in cases:
        d = c.to_dict()
        d["provenance"].pop("created_at")
        h.update(b"\n")
        h.update(json.dumps(d, sort_keys=True, ensure_ascii=False).encode())
    return h.hexdigest()


class CaseStore:
    """Mutable, thread-safe case base. Writes are serialized by a lock."""

    def __init__(self, embedding_model_id: str = "", embedding_dim: int | None = None,
                 cases: Iterable[Case] = ()):
        if embedding_dim is not None and embedding_dim <= 0:
            raise DataError("embedding_dim must be positive")
        self.header = StoreHeader(embedding_model_id, embedding_dim)
        self._cases: list[Case] = []
        self._ids: set[str] = set()
        self._index: dict[RiskType, list[str]] = {r: [] for r in RiskType}
        self._lock = threading.RLock()
        for c in cases:
            self._append(c)

    # -- read side -------------------------------------------------------
    def __len__(self) -> int:
        return len(self._cases)

    def __iter__(self):
        return iter(list(self._cases))

    def __eq__(self, other) -> bool:
        if not isinstance(other, CaseStore):
            return NotImplemented
        return self.header == other.header and self._cases == other._cases

    @property
    def cases(self) -> tuple[Case, ...]:
        return tuple(self._cases)

    @property
    def index(self) -> dict[RiskType, tuple[str, ...]]:
        return {r: tuple(ids) for r, ids in self._index.items()}

    @property
    def dim(self) -> int | None:
        return self.header.embedding_dim

    def snapshot(self) -> CaseBaseView:
        with self._lock:
            return CaseBaseView(self.header, self._cases)

    def digest(self) -> str:
        with self._lock:
            return store_digest(self.header, self._cases)

    def source_event_ids(self) -> set[str]:
        return {c.provenance.source_event_id for c in self._cases}

    # -- write side ------------------------------------------------------
    def _append(self, case: Case) -> None:
        if case.case_id in self._ids:
            raise DuplicateCaseId(case.case_id)
        if case.embedding is not None:
            if self.header.embedding_dim is None:
                self.header = StoreHeader(self.header.embedding_model_id, len(case.embedding))
            elif len(case.embedding) != self.header.embedding_dim:
                raise DimensionMismatch(case.case_id, self.header.embedding_dim, len(case.embedding))
        self._cases.append(case)
        self._ids.add(case.case_id)
        self._index[case.risk_type].append(case.case_id)

    def add(self, case: Case) -> None:
        with self._lock:
            self._append(case)

    def _mint_id(self) -> str:
        n = len(self._cases) + 1
        while f"case-{n:06d}" in self._ids:
            n += 1
        return f"case-{n:06d}"

    def set_embedding_model(self, model_id: str) -> None:
        with self._lock:
            self.header = StoreHeader(model_id, self.header.embedding_dim)

    def retain(self, event: ScdsEvent, decision: Decision, embedding: Sequence[float] | None,
               created_at: str | None = None, case_id: str | None = None) -> str:
        """Append a case keyed by the event and valued by the decision."""
        if not decision.valid:
            raise InvalidDecision(f"decision for event {decision.event_id!r} has an empty value field")
        with self._lock:
            cid = case_id or self._mint_id()
            if embedding is not None and self.header.embedding_dim is not None \
                    and len(embedding) != self.header.embedding_dim:
                raise DimensionMismatch(cid, self.header.embedding_dim, len(embedding))
            case = Case(
                case_id=cid,
                risk_type=event.risk_type,
                caption=event.caption,
                **decision.values(),
                embedding=tuple(embedding) if embedding is not None else None,
                provenance=Provenance(event.event_id, created_at or _now_iso()),
            )
            self._append(case)
            return cid

    # -- persistence -----------------------------------------------------
    def save(self, path: str | os.PathLike) -> None:
        """Atomically write the store (temp file in the same dir, then rename)."""
        path = Path(path)
        with self._lock:
            lines = [json.dumps(self.header.to_dict())]
            lines += [json.dumps(c.to_dict(), ensure_ascii=False) for c in self._cases]
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                f.write("\n".join(lines) + "\n")
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load(cls, path: str | os.PathLike) -> CaseStore:
        path = Path(path)
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
        if not lines or not lines[0].strip():
            raise ParseError(1, "missing header line", str(path))
        try:
            head = json.loads(lines[0])
            if not isinstance(head, dict) or "embedding_dim" not in head:
                raise ValueError("header must be an object with embedding_dim")
            if head.get("format_version", FORMAT_VERSION) != FORMAT_VERSION:
                raise ValueError(f"unsupported format_version {head.get('format_version')}")
        except ValueError as e:
            raise ParseError(1, f"bad header: {e}", str(path)) from None
        store = cls(head.get("embedding_model_id") or "", head.get("embedding_dim"))
        for no, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            try:
                case = Case.from_dict(json.loads(line))
            except (ValueError, KeyError, TypeError, DataError) as e:
                raise ParseError(no, f"bad case record: {e}", str(path)) from None
            store._append(case)
        return store
