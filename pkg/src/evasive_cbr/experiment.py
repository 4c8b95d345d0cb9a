"""Dataset ingest, balanced splitting, case-base construction, sweeps, reports, retain."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import random
from collections import Counter
from collections.abc import Callable, Iterable, Sequence
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from . import reporting
from .casebase import CaseStore
from .errors import (CbrError, DataError, DuplicateEventId, EmbeddingModelMismatch, InsufficientType,
                     MissingCell, MissingValueField, ParseError)
from .gateway import GatewayConfig
from .metrics import MetricReport, aggregate
from .pipeline import Chat, Embed, RunConfig, atomic_write_text, events_digest, read_records, run_batch
from .prompts import PromptConfig
from .taxonomy import (CAPTION_BAND, TEXT_VALUE_FIELDS, AnnotatedEvent, Decision, PromptMode, RiskType,
                       Sampling, ScdsEvent, event_to_dict)

log = logging.getLogger(__name__)

EVENT_KEYS = ("event_id", "caption", "risk_type", "ground_truth_maneuver")


# -- dataset ---------------------------------------------------------------

@dataclass
class Dataset:
    entries: list[AnnotatedEvent]
    digest: str = ""
    warnings: list[str] = field(default_factory=list)
    path: str | None = None

    def __post_init__(self):
        if not self.digest:
            self.digest = dataset_digest(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def events(self) -> list[ScdsEvent]:
        return [a.event for a in self.entries]

    def counts(self) -> dict[RiskType, int]:
        c = Counter(a.event.risk_type for a in self.entries)
        return {r: c[r] for r in RiskType}


def entry_to_dict(entry: AnnotatedEvent) -> dict:
    d = event_to_dict(entry.event)
    if entry.values:
        d.update({k: entry.values[k] for k in TEXT_VALUE_FIELDS if k in entry.values})
    return d


def dataset_digest(entries: Iterable[AnnotatedEvent]) -> str:
    h = hashlib.sha256()
    for e in entries:
        h.update(json.dumps(entry_to_dict(e), sort_keys=True, ensure_ascii=False).encode())
        h.update(b"\n")
    return h.hexdigest()


def _entry_from_record(rec: dict) -> AnnotatedEvent:
    if not isinstance(rec, dict):
        raise ValueError("record is not an object")
    if "ground_truth_maneuver" not in rec and "ego_car_evasive_maneuver" in rec:
        rec = {**rec, "ground_truth_maneuver": rec["ego_car_evasive_maneuver"]}
    missing = [k for k in EVENT_KEYS if not rec.get(k)]
    if missing:
        raise ValueError(f"missing {', '.join(missing)}")
    event = ScdsEvent(str(rec["event_id"]), rec["caption"], rec["risk_type"], rec["ground_truth_maneuver"])
    values = {k: rec[k] for k in TEXT_VALUE_FIELDS if isinstance(rec.get(k), str) and rec[k].strip()}
    return AnnotatedEvent(event, values or None)


def _iter_records(path: Path):
    """Yield (line_no, record) pairs. ``.csv``/``.tsv`` use the tabular fallback."""
    if path.suffix.lower() in (".csv", ".tsv"):
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.DictReader(f, delimiter="\t" if path.suffix.lower() == ".tsv" else ",")
            for rec in reader:
                # line_num is the physical line the row ended on (quoted fields may span lines)
                yield reader.line_num, rec
        return
    with open(path, encoding="utf-8") as f:
        for no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                yield no, json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(no, f"invalid JSON: {e.msg}", str(path)) from None


def ingest(path: str | Path) -> Dataset:
    """Load and validate a dataset file; any bad line aborts with its line number."""
    path = Path(path)
    entries: list[AnnotatedEvent] = []
    seen: set[str] = set()
    warnings: list[str] = []
    lo, hi = CAPTION_BAND
    for no, rec in _iter_records(path):
        try:
            entry = _entry_from_record(rec)
        except (ValueError, TypeError, DataError) as e:
            raise ParseError(no, str(e), str(path)) from None
        if entry.event_id in seen:
            raise DuplicateEventId(entry.event_id, no)
        seen.add(entry.event_id)
        if not entry.event.caption_in_band:
            msg = (f"line {no}: caption of {entry.event_id!r} has {len(entry.event.caption)} characters, "
                   f"outside {lo}-{hi}")
            warnings.append(msg)
            log.warning(msg)
        entries.append(entry)
    return Dataset(entries, warnings=warnings, path=str(path))


def write_dataset(path: str | Path, entries: Iterable[AnnotatedEvent]) -> None:
    atomic_write_text(Path(path), "".join(
        json.dumps(entry_to_dict(e), ensure_ascii=False) + "\n" for e in entries))


# -- split -----------------------------------------------------------------

def type_quotas(test_size: int, rng: random.Random) -> dict[RiskType, int]:
    types = list(RiskType)
    base, extra = divmod(test_size, len(types))
    plus = set(rng.sample(types, extra))
    return {r: base + (r in plus) for r in types}


def split_balanced(ds: Dataset | Sequence[AnnotatedEvent], test_size: int, seed: int = 0
                   ) -> tuple[list[AnnotatedEvent], list[AnnotatedEvent]]:
    """Stratified test/case-bank split; both parts keep dataset order."""
    entries = ds.entries if isinstance(ds, Dataset) else list(ds)
    if not 0 <= test_size <= len(entries):
        raise DataError(f"test_size {test_size} outside 0..{len(entries)}")
    rng = random.Random(seed)
    quotas = type_quotas(test_size, rng)
    chosen: set[int] = set()
    for rt in RiskType:
        pool = [i for i, e in enumerate(entries) if e.event.risk_type is rt]
        if len(pool) < quotas[rt]:
            raise InsufficientType(rt, len(pool), quotas[rt])
        chosen.update(rng.sample(pool, quotas[rt]))
    test = [e for i, e in enumerate(entries) if i in chosen]
    bank = [e for i, e in enumerate(entries) if i not in chosen]
    return test, bank


# -- case base -------------------------------------------------------------

def _case_decision(entry: AnnotatedEvent) -> Decision:
    values = entry.values or {}
    for k in TEXT_VALUE_FIELDS:
        if not (values.get(k) or "").strip():
            raise MissingValueField(entry.event_id, k)
    return Decision(entry.event_id, **entry.case_values())


def build_case_base(casebank: Sequence[AnnotatedEvent], embed: Embed, out_path: str | Path,
                    checkpoint_every: int = 100, resume: bool = True) -> CaseStore:
    """Embed every case-bank event into a persisted store.

    Progress is saved every ``checkpoint_every`` cases and whenever embedding
    fails, so a rerun with ``resume`` picks up where the last one stopped.
    """
    out_path = Path(out_path)
    decisions = [_case_decision(e) for e in casebank]  # validate everything before any network call
    model_id = getattr(embed, "model_id", "")
    if resume and out_path.exists():
        store = CaseStore.load(out_path)
        if store.header.embedding_model_id and model_id and store.header.embedding_model_id != model_id:
            raise EmbeddingModelMismatch(
                f"{out_path} was built with {store.header.embedding_model_id!r}, not {model_id!r}")
        log.info("resuming %s with %d cases", out_path, len(store))
    else:
        store = CaseStore(model_id)
    store.set_embedding_model(model_id or store.header.embedding_model_id)
    done = store.source_event_ids()
    pending = 0
    try:
        for entry, dec in zip(casebank, decisions):
            if entry.event_id in done:
                continue
            store.retain(entry.event, dec, embed(entry.event.caption))
            pending += 1
            if checkpoint_every and pending % checkpoint_every == 0:
                store.save(out_path)
    finally:
        if pending or not out_path.exists():
            store.save(out_path)
    return store


# -- sweeps ----------------------------------------------------------------

@dataclass(frozen=True)
class CellSpec:
    model_id: str
    mode: PromptMode
    sampling: Sampling
    shots: int

    def label(self) -> reporting.CellLabel:
        return reporting.CellLabel(self.model_id, self.mode.value, self.sampling.value, self.shots)

    def to_dict(self) -> dict:
        return {"model_id": self.model_id, "mode": self.mode.value,
                "sampling": self.sampling.value, "shots": self.shots}


@dataclass(frozen=True)
class SweepConfig:
    model_ids: tuple[str, ...]
    modes: tuple[PromptMode, ...] = (PromptMode.RISK_AWARE,)
    samplings: tuple[Sampling, ...] = (Sampling.RANDOM, Sampling.SIMILARITY)
    shot_counts: tuple[int, ...] = (1, 3, 5)
    seed: int = 0
    include_baseline: bool = True
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    concurrency: int = 1
    temperature: float = 0.0
    max_tokens: int = 1024
    include_cot: bool = True
    cross_type_random: bool = False
    reask: bool = False

    def __post_init__(self):
        object.__setattr__(self, "model_ids", tuple(self.model_ids))
        object.__setattr__(self, "modes", tuple(PromptMode(m) for m in self.modes))
        object.__setattr__(self, "samplings",
                           tuple(s for s in (Sampling(x) for x in self.samplings) if s is not Sampling.NONE))
        object.__setattr__(self, "shot_counts", tuple(self.shot_counts))
        if not self.model_ids or not self.modes:
            raise DataError("a sweep needs at least one model and one prompt mode")
        if any(k < 0 for k in self.shot_counts):
            raise DataError("shot counts must be >= 0")
        if any(k > 0 for k in self.shot_counts) and not self.samplings:
            raise DataError("positive shot counts need a sampling method")
        if not self.cells():
            raise DataError("sweep has no cells")

    def cells(self) -> list[CellSpec]:
        shots = sorted({k for k in self.shot_counts if k > 0})
        out = []
        for model in self.model_ids:
            for mode in self.modes:
                if self.include_baseline or 0 in self.shot_counts:
                    out.append(CellSpec(model, mode, Sampling.NONE, 0))
                for s in self.samplings:
                    out += [CellSpec(model, mode, s, k) for k in shots]
        return out

    def run_config(self, cell: CellSpec) -> RunConfig:
        return RunConfig(
            model_id=cell.model_id,
            prompt=PromptConfig(cell.mode, cell.shots, include_cot=self.include_cot),
            sampling=cell.sampling, seed=self.seed, concurrency=self.concurrency,
            gateway=self.gateway, temperature=self.temperature, max_tokens=self.max_tokens,
            cross_type_random=self.cross_type_random, reask=self.reask,
        )

    def to_dict(self) -> dict:
        return {
            "model_ids": list(self.model_ids), "modes": [m.value for m in self.modes],
            "samplings": [s.value for s in self.samplings], "shot_counts": list(self.shot_counts),
            "seed": self.seed, "include_baseline": self.include_baseline,
            "endpoint": self.gateway.base_url, "profile": asdict(self.gateway.profile),
            "temperature": self.temperature, "max_tokens": self.max_tokens,
            "include_cot": self.include_cot, "cross_type_random": self.cross_type_random,
            "reask": self.reask,
        }


PRESETS: dict[str, dict] = {
    # zero-shot, risk-unaware, meant for the full dataset
    "q1": dict(modes=(PromptMode.RISK_UNAWARE,), samplings=(), shot_counts=(0,)),
    # both prompt modes, zero-shot
    "q2": dict(modes=(PromptMode.RISK_UNAWARE, PromptMode.RISK_AWARE), samplings=(), shot_counts=(0,)),
    # few-shot over the case base on the held-out split
    "q3": dict(modes=(PromptMode.RISK_AWARE,), samplings=(Sampling.RANDOM, Sampling.SIMILARITY),
               shot_counts=(1, 3, 5), include_baseline=True),
}


def preset(name: str, model_ids: Sequence[str], **overrides) -> SweepConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise DataError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return SweepConfig(model_ids=tuple(model_ids), **{**base, **overrides})


def cell_key(run_cfg: RunConfig, data_digest: str, store_digest: str | None) -> str:
    """Content address of a cell. Zero-shot cells do not depend on the store."""
    payload = {"config": run_cfg.identity(), "seed": run_cfg.seed, "dataset": data_digest,
               "store": store_digest if run_cfg.prompt.shots else None}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def _cell_complete(cell_dir: Path, key: str) -> bool:
    try:
        meta = json.loads((cell_dir / "cell.json").read_text(encoding="utf-8"))
    except (OSError, ValueError):
        return False
    return (meta.get("key") == key and (cell_dir / "records.jsonl").exists()
            and (cell_dir / "metrics.json").exists())


def evaluate_cell(cell_dir: str | Path, gold: Sequence[AnnotatedEvent], smoothing: str = "add1") -> MetricReport:
    cell_dir = Path(cell_dir)
    report = aggregate(read_records(cell_dir), gold, smoothing)
    atomic_write_text(cell_dir / "metrics.json", json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return report


@dataclass
class SweepResult:
    run_dir: Path
    cells: list[dict]

    @property
    def n_ran(self) -> int:
        return sum(c["status"] == "ran" for c in self.cells)

    @property
    def n_cached(self) -> int:
        return sum(c["status"] == "cached" for c in self.cells)

    @property
    def n_failed(self) -> int:
        return sum(c["status"] == "failed" for c in self.cells)


def run_sweep(sweep: SweepConfig, test: Dataset | Sequence[AnnotatedEvent], store: CaseStore,
              embed: Embed | None, chat_for: Callable[[str], Chat], run_dir: str | Path,
              smoothing: str = "add1") -> SweepResult:
    """Run every cell of the sweep in order; completed cells with matching keys are skipped.

    ``chat_for(model_id)`` returns the chat callable for one model.
    """
    run_dir = Path(run_dir)
    entries = test.entries if isinstance(test, Dataset) else list(test)
    data_digest = dataset_digest(entries)
    sdigest = store.digest()
    events = [e.event for e in entries]
    plan = []
    for cell in sweep.cells():
        rc = sweep.run_config(cell)
        plan.append((cell, rc, cell_key(rc, data_digest, sdigest)))
    sweep_doc = {
        "sweep": sweep.to_dict(), "dataset_digest": data_digest, "store_digest": sdigest,
        "events_digest": events_digest(events), "bleu_smoothing": smoothing,
        "cells": [{**c.to_dict(), "key": k, "dir": f"cells/{k}"} for c, _, k in plan],
    }
    atomic_write_text(run_dir / "sweep.json", json.dumps(sweep_doc, indent=2) + "\n")

    needs_store = any(c.shots for c, _, _ in plan)
    if needs_store and any(c.sampling is Sampling.SIMILARITY for c, _, _ in plan):
        if any(c.embedding is None for c in store.cases):
            raise DataError("similarity sampling needs every case embedded")

    statuses = []
    for cell, rc, key in plan:
        cell_dir = run_dir / "cells" / key
        entry = {**cell.to_dict(), "key": key}
        if _cell_complete(cell_dir, key):
            log.info("cell %s cached", key)
            statuses.append({**entry, "status": "cached"})
            continue
        try:
            run_batch(rc, store, events, embed, chat_for(cell.model_id), out_dir=cell_dir)
            rep = evaluate_cell(cell_dir, entries, smoothing)
            atomic_write_text(cell_dir / "cell.json",
                              json.dumps({**entry, "config": rc.identity()}, indent=2, sort_keys=True) + "\n")
            log.info("cell %s: accuracy %.3f", cell.label().short(), rep.maneuver_micro_accuracy)
            statuses.append({**entry, "status": "ran"})
        except CbrError as e:
            log.error("cell %s failed: %s", key, e)
            statuses.append({**entry, "status": "failed", "error": f"{type(e).__name__}: {e}"})
    atomic_write_text(run_dir / "status.json", json.dumps(statuses, indent=2) + "\n")
    report(run_dir)
    return SweepResult(run_dir, statuses)


# -- reporting -------------------------------------------------------------

@dataclass
class Report:
    cells: list[tuple[reporting.CellLabel, MetricReport]]
    missing: list[MissingCell]
    tables: dict[str, str]


def _load_cells(run_dir: Path) -> list[tuple[dict, Path]]:
    sweep_path = run_dir / "sweep.json"
    if sweep_path.exists():
        doc = json.loads(sweep_path.read_text(encoding="utf-8"))
        return [(c, run_dir / c["dir"]) for c in doc["cells"]]
    # ad-hoc layout: every subdirectory (or the directory itself) holding cell.json
    found = sorted(p.parent for p in run_dir.glob("**/cell.json"))
    out = []
    for d in found:
        meta = json.loads((d / "cell.json").read_text(encoding="utf-8"))
        out.append((meta, d))
    return out


def report(run_dir: str | Path, write: bool = True) -> Report:
    """Render tables for every completed cell; missing cells are listed, not fatal."""
    run_dir = Path(run_dir)
    cells: list[tuple[reporting.CellLabel, MetricReport]] = []
    missing: list[MissingCell] = []
    for meta, cell_dir in _load_cells(run_dir):
        label = reporting.CellLabel(meta["model_id"], meta["mode"], meta["sampling"], meta["shots"])
        mpath = cell_dir / "metrics.json"
        if not mpath.exists():
            missing.append(MissingCell(f"{meta.get('key', cell_dir.name)} ({label.short()})"))
            continue
        cells.append((label, MetricReport.from_dict(json.loads(mpath.read_text(encoding="utf-8")))))

    tables: dict[str, str] = {}
    if cells:
        tables["overall.txt"] = reporting.overall_table(cells)
        for model in dict.fromkeys(c.model_id for c, _ in cells):
            safe = "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in model)
            tables[f"sweep_{safe}.txt"] = reporting.sweep_table(model, cells)
        tables["per_scenario.txt"] = reporting.scenario_table(cells)
        tables["overall.csv"] = reporting.overall_csv(cells)
        tables["per_scenario.csv"] = reporting.scenario_csv(cells)
        tables["shot_curve.csv"] = reporting.shot_curve_csv(cells)
    if missing:
        tables["missing.txt"] = "\n".join(str(m) for m in missing) + "\n"
    if write:
        out = run_dir / "report"
        for name, text in tables.items():
            atomic_write_text(out / name, text if text.endswith("\n") else text + "\n")
        atomic_write_text(out / "report.json", json.dumps({
            "cells": [{"label": {"model_id": c.model_id, "mode": c.mode, "sampling": c.sampling,
                                 "shots": c.shots}, "metrics": r.to_dict()} for c, r in cells],
            "missing": [m.cell_key for m in missing],
        }, indent=2) + "\n")
    return Report(cells, missing, tables)


# -- retain ----------------------------------------------------------------

RETAIN_POLICIES = ("correct-only", "all")


@dataclass
class RetainResult:
    added: list[str]
    skipped: list[tuple[str, str]]
    before: int
    after: int
    duplicates: list[str]


def retain_from_run(cell_dir: str | Path, store: CaseStore, gold: Dataset | Sequence[AnnotatedEvent],
                    embed: Embed, policy: str = "correct-only") -> RetainResult:
    """Append qualifying decisions of one completed run as new cases.

    Captions are embedded afresh. Nothing is deduplicated: events already in
    the store are added again and reported in ``duplicates``.
    """
    if policy not in RETAIN_POLICIES:
        raise DataError(f"policy must be one of {RETAIN_POLICIES}")
    entries = gold.entries if isinstance(gold, Dataset) else list(gold)
    by_id = {e.event_id: e for e in entries}
    model_id = getattr(embed, "model_id", "")
    if store.header.embedding_model_id and model_id and model_id != store.header.embedding_model_id:
        raise EmbeddingModelMismatch(
            f"store uses {store.header.embedding_model_id!r}, retain embedder is {model_id!r}")
    records = read_records(Path(cell_dir))
    existing = store.source_event_ids()
    before = len(store)
    added, skipped, dups = [], [], []
    for rec in records:
        entry = by_id.get(rec.event_id)
        if entry is None:
            skipped.append((rec.event_id, "not in the gold dataset"))
            continue
        if not rec.ok:
            skipped.append((rec.event_id, f"failed record ({rec.error_type})"))
            continue
        dec = rec.decision
        if policy == "correct-only" and dec.ego_car_evasive_maneuver != entry.event.ground_truth_maneuver:
            skipped.append((rec.event_id, "maneuver differs from ground truth"))
            continue
        if not dec.valid:
            skipped.append((rec.event_id, "decision has an empty value field"))
            continue
        if rec.event_id in existing:
            dups.append(rec.event_id)
        added.append(store.retain(entry.event, replace(dec, meta=None), embed(entry.event.caption)))
    if dups:
        log.warning("%d retained events were already in the case base: %s", len(dups),
                    ", ".join(dups[:5]) + (" ..." if len(dups) > 5 else ""))
    return RetainResult(added, skipped, before, len(store), dups)
