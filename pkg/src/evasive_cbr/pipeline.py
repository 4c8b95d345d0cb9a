"""One decision per event (retrieve, prompt, call, extract) and batch runs."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import time
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

from .casebase import CaseBaseView, CaseStore
from .errors import CbrError, DataError, EmbeddingModelMismatch, ExtractionError
from .gateway import ChatRequest, GatewayConfig, Message, extract_decision
from .prompts import PromptConfig, assemble
from .retrieval import RetrievalQuery, retrieve_random, retrieve_similar
from .taxonomy import VALUE_FIELDS, Decision, RunMeta, Sampling, ScdsEvent, event_to_dict

log = logging.getLogger(__name__)

Embed = Callable[[str], Sequence[float]]
Chat = Callable[[ChatRequest], str]

REASK_PROMPT = (
    "Your previous reply could not be parsed ({error}). Reply again with only the JSON "
    "object containing the six required keys.\n\nPrevious reply:\n{raw}"
)


@dataclass(frozen=True)
class RunConfig:
    model_id: str
    prompt: PromptConfig = field(default_factory=PromptConfig)
    sampling: Sampling = Sampling.NONE
    seed: int = 0
    concurrency: int = 1
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    temperature: float = 0.0
    max_tokens: int = 1024
    cross_type_random: bool = False
    reask: bool = False

    def __post_init__(self):
        object.__setattr__(self, "sampling", Sampling(self.sampling))
        if self.concurrency < 1:
            raise DataError("concurrency must be >= 1")
        if (self.sampling is Sampling.NONE) != (self.prompt.shots == 0):
            raise DataError("sampling must be None exactly when shots == 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sampling"] = self.sampling.value
        d["prompt"]["mode"] = self.prompt.mode.value
        return d

    def identity(self) -> dict:
        """Fields that determine results (drops throughput/transport knobs)."""
        d = self.to_dict()
        d.pop("concurrency")
        d["gateway"] = {"base_url": self.gateway.base_url}
        return d


@dataclass
class RunRecord:
    event_id: str
    decision: Decision | None
    meta: RunMeta | None
    prompt_digest: str = ""
    raw_response: str = ""
    error_type: str = ""
    error_message: str = ""
    latency_ms: int = 0

    @property
    def ok(self) -> bool:
        return self.decision is not None

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {
            "event_id": self.event_id,
            "status": "ok" if self.ok else "failed",
            "values": self.decision.values() if self.decision else None,
            "error": {"type": self.error_type, "message": self.error_message} if not self.ok else None,
            "meta": self.meta.to_dict(include_timing) if self.meta else None,
            "prompt_digest": self.prompt_digest,
            "raw_response": self.raw_response,
        }
        if include_timing:
            d["latency_ms"] = self.latency_ms
        return d

    @classmethod
    def from_dict(cls, d: dict, latency_ms: int = 0) -> RunRecord:
        meta = RunMeta.from_dict({**d["meta"], "latency_ms": latency_ms}) if d.get("meta") else None
        decision = None
        if d.get("values"):
            decision = Decision(event_id=d["event_id"], **{f: d["values"][f] for f in VALUE_FIELDS},
                                raw_response=d.get("raw_response", ""), meta=meta)
        err = d.get("error") or {}
        return cls(d["event_id"], decision, meta, d.get("prompt_digest", ""), d.get("raw_response", ""),
                   err.get("type", ""), err.get("message", ""), latency_ms)


def event_seed(seed: int, event_id: str) -> int:
    """Per-event seed, independent of execution order."""
    return int.from_bytes(hashlib.sha256(f"{seed}:{event_id}".encode()).digest()[:8], "big")


def _elapsed_ms(t0: float) -> int:
    return int(round((time.perf_counter() - t0) * 1000))


def decide_event(cfg: RunConfig, view: CaseBaseView, event: ScdsEvent, embed: Embed | None,
                 chat: Chat) -> RunRecord:
    """Run one event through retrieval, prompting, the model and extraction.

    Any failure is captured in the returned record rather than raised.
    """
    t0 = time.perf_counter()
    meta = None
    digest = raw = ""
    k = cfg.prompt.shots
    try:
        if cfg.sampling is Sampling.SIMILARITY:
            if embed is None:
                raise DataError("similarity sampling needs an embedding client")
            model = getattr(embed, "model_id", "")
            if model and view.header.embedding_model_id and model != view.header.embedding_model_id:
                raise EmbeddingModelMismatch(
                    f"query embedder {model!r} differs from case-base model "
                    f"{view.header.embedding_model_id!r}")
            hits = retrieve_similar(view, RetrievalQuery(event.risk_type, embed(event.caption), k))
        elif cfg.sampling is Sampling.RANDOM:
            hits = retrieve_random(view, event.risk_type, k, event_seed(cfg.seed, event.event_id),
                                   cross_type=cfg.cross_type_random)
        else:
            hits = []
        prompt_cfg = cfg.prompt
        if len(hits) < k:
            # Small partition: render what exists rather than fail the event.
            if not hits:
                raise DataError(f"no cases of type {event.risk_type.value!r} to sample from")
            log.warning("event %s: only %d of %d examples available", event.event_id, len(hits), k)
            prompt_cfg = replace(prompt_cfg, shots=len(hits))
        cases = [view[h.case_id] for h in hits]
        bundle, req = assemble(prompt_cfg, event, cases, cfg.model_id, cfg.temperature, cfg.max_tokens)
        digest = bundle.digest()
        meta = RunMeta(cfg.model_id, cfg.prompt.mode, cfg.sampling, len(hits),
                       tuple(h.case_id for h in hits), cfg.seed)
        raw = chat(req)
        try:
            decision = extract_decision(raw, event.event_id)
        except ExtractionError as first:
            if not cfg.reask:
                raise
            retry = ChatRequest(req.model_id, req.messages + (
                Message("user", REASK_PROMPT.format(error=first, raw=raw)),), req.temperature, req.max_tokens)
            raw = chat(retry)
            decision = extract_decision(raw, event.event_id)
    except Exception as e:  # noqa: BLE001 - one bad event must not stop the batch
        if not isinstance(e, CbrError):
            log.warning("event %s failed with unexpected %s: %s", event.event_id, type(e).__name__, e)
        return RunRecord(event.event_id, None, meta, digest, raw if isinstance(raw, str) else "",
                         type(e).__name__, str(e), _elapsed_ms(t0))
    latency = _elapsed_ms(t0)
    meta = replace(meta, latency_ms=latency)
    decision = replace(decision, raw_response=raw, meta=meta)
    return RunRecord(event.event_id, decision, meta, digest, raw, latency_ms=latency)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


def events_digest(events: Sequence[ScdsEvent]) -> str:
    h = hashlib.sha256()
    for e in events:
        h.update(json.dumps(event_to_dict(e), sort_keys=True, ensure_ascii=False).encode())
        h.update(b"\n")
    return h.hexdigest()


def atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_records(out_dir: Path, records: Sequence[RunRecord], manifest: dict) -> None:
    """records.jsonl holds no wall-clock data; latencies go to timings.jsonl."""
    out_dir = Path(out_dir)
    atomic_write_text(out_dir / "records.jsonl", "".join(
        json.dumps(r.to_dict(), ensure_ascii=False, sort_keys=True) + "\n" for r in records))
    atomic_write_text(out_dir / "timings.jsonl", "".join(
        json.dumps({"event_id": r.event_id, "latency_ms": r.latency_ms}) + "\n" for r in records))
    atomic_write_text(out_dir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_records(out_dir: Path) -> list[RunRecord]:
    out_dir = Path(out_dir)
    timings: dict[str, int] = {}
    tpath = out_dir / "timings.jsonl"
    if tpath.exists():
        for line in tpath.read_text(encoding="utf-8").splitlines():
            if line.strip():
                t = json.loads(line)
                timings[t["event_id"]] = t["latency_ms"]
    records = []
    for line in (out_dir / "records.jsonl").read_text(encoding="utf-8").splitlines():
        if line.strip():
            d = json.loads(line)
            records.append(RunRecord.from_dict(d, timings.get(d["event_id"], 0)))
    return records


def run_batch(cfg: RunConfig, store: CaseStore | CaseBaseView, events: Sequence[ScdsEvent],
              embed: Embed | None, chat: Chat, out_dir: str | os.PathLike | None = None
              ) -> tuple[list[RunRecord], dict]:
    """Decide every event over one immutable snapshot; records keep input order."""
    view = store.snapshot() if isinstance(store, CaseStore) else store
    started = _now()
    if cfg.concurrency == 1 or len(events) <= 1:
        records = [decide_event(cfg, view, e, embed, chat) for e in events]
    else:
        with ThreadPoolExecutor(max_workers=cfg.concurrency) as pool:
            records = list(pool.map(lambda e: decide_event(cfg, view, e, embed, chat), events))
    manifest = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "store_digest": view.digest(),
        "events_digest": events_digest(events),
        "digest_algorithm": "sha256",
        "n_events": len(records),
        "n_ok": sum(r.ok for r in records),
        "n_failed": sum(not r.ok for r in records),
        "started_at": started,
        "finished_at": _now(),
    }
    if out_dir is not None:
        write_records(Path(out_dir), records, manifest)
    return records, manifest
