"""Command-line entry point: ``evasive-cbr <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 gateway error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import experiment as ex
from .casebase import CaseStore
from .errors import DataError, GatewayError
from .gateway import PROFILES, GatewayConfig, HttpChat, HttpEmbedder, MockEmbedder
from .mocks import CaseFollowingChat
from .taxonomy import PromptMode, Sampling

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_GATEWAY = 0, 1, 2, 3

DEFAULT_EMBED_MODEL = "nomic-embed-text"
DEFAULT_CHAT_MODEL = "llama3.3:70b"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit with 2, which we reserve for data errors
        raise UsageError(f"{self.prog}: error: {message}")


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--endpoint", default=d(None), help="model service base URL (env EVASIVE_CBR_ENDPOINT)")
    p.add_argument("--profile", choices=sorted(PROFILES), default=d("ollama"), help="endpoint wire format")
    p.add_argument("--timeout-ms", type=int, default=d(None), help="per-request timeout (env EVASIVE_CBR_TIMEOUT_MS)")
    p.add_argument("--embed-model", default=d(DEFAULT_EMBED_MODEL))
    p.add_argument("--chat-model", default=d(DEFAULT_CHAT_MODEL),
                   help="chat model id; comma-separated list for sweeps")
    p.add_argument("--seed", type=int, default=d(0))
    p.add_argument("--concurrency", type=int, default=d(1))
    p.add_argument("--out", default=d("out"), help="output directory")
    p.add_argument("--mock", action="store_true", default=d(False),
                   help="offline hashed embedder and case-following chat model")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="evasive-cbr", description="Case-based evasive maneuver recommendation experiments")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def cmd(name, help_):
        p = sub.add_parser(name, help=help_)
        _global_flags(p, suppress=True)
        return p

    p = cmd("ingest", "validate a dataset file and print per-type counts")
    p.add_argument("dataset")

    p = cmd("split", "balanced test / case-bank split")
    p.add_argument("dataset")
    p.add_argument("--test-size", type=int, default=100)

    p = cmd("build-case-base", "embed a case bank into a case-base file")
    p.add_argument("casebank")
    p.add_argument("--store", help="output file (default <out>/casebase.jsonl)")
    p.add_argument("--checkpoint-every", type=int, default=100)
    p.add_argument("--no-resume", action="store_true")

    def cell_axes(p, single: bool):
        if single:
            p.add_argument("--mode", choices=[m.value for m in PromptMode], default=PromptMode.RISK_AWARE.value)
            p.add_argument("--sampling", choices=[s.value for s in Sampling], default=Sampling.NONE.value)
            p.add_argument("--shots", type=int, default=0)
        else:
            p.add_argument("--preset", choices=sorted(ex.PRESETS))
            p.add_argument("--modes", nargs="+", choices=[m.value for m in PromptMode])
            p.add_argument("--samplings", nargs="+", choices=[Sampling.RANDOM.value, Sampling.SIMILARITY.value])
            p.add_argument("--shots", nargs="+", type=int)
            p.add_argument("--no-baseline", action="store_true")
        p.add_argument("dataset", help="test events")
        p.add_argument("--store", help="case-base file (needed when shots > 0)")
        p.add_argument("--no-cot", action="store_true", help="omit the reasoning-steps block")
        p.add_argument("--reask", action="store_true", help="re-ask once when the reply cannot be parsed")
        p.add_argument("--cross-type-random", action="store_true")
        p.add_argument("--temperature", type=float, default=0.0)
        p.add_argument("--smoothing", choices=["add1", "none", "epsilon"], default="add1")

    cell_axes(cmd("run", "run one configuration over a test set"), single=True)
    cell_axes(cmd("sweep", "run a grid of configurations"), single=False)

    p = cmd("evaluate", "score a run (cell or sweep directory) against gold")
    p.add_argument("run_dir")
    p.add_argument("--dataset", required=True)
    p.add_argument("--smoothing", choices=["add1", "none", "epsilon"], default="add1")

    p = cmd("report", "render tables for a sweep directory")
    p.add_argument("run_dir")

    p = cmd("retain", "append decisions of a finished run to the case base")
    p.add_argument("run_dir", help="cell directory holding records.jsonl")
    p.add_argument("--dataset", required=True, help="gold events of the run")
    p.add_argument("--store", required=True)
    p.add_argument("--store-out", help="write here instead of overwriting --store")
    p.add_argument("--policy", choices=ex.RETAIN_POLICIES, default="correct-only")
    return parser


# -- wiring ----------------------------------------------------------------

def _gateway(args) -> GatewayConfig:
    cfg = GatewayConfig.from_env(profile=PROFILES[args.profile])
    if args.endpoint:
        cfg = replace(cfg, base_url=args.endpoint)
    if args.timeout_ms:
        cfg = replace(cfg, timeout_ms=args.timeout_ms)
    return cfg


def _embedder(args):
    if args.mock:
        return MockEmbedder(model_id=args.embed_model)
    return HttpEmbedder(_gateway(args), args.embed_model)


def _chat_for(args):
    if args.mock:
        return lambda model_id: CaseFollowingChat()
    chat = HttpChat(_gateway(args))
    return lambda model_id: chat


def _models(args) -> list[str]:
    return [m.strip() for m in args.chat_model.split(",") if m.strip()]


def _load_store(path: str | None, needed: bool) -> CaseStore:
    if path:
        return CaseStore.load(path)
    if needed:
        raise DataError("--store is required when shots > 0")
    return CaseStore()


def _print_counts(ds: ex.Dataset) -> None:
    for rt, n in ds.counts().items():
        print(f"  {rt.value:<40} {n}")


# -- subcommands -----------------------------------------------------------

def cmd_ingest(args) -> int:
    ds = ex.ingest(args.dataset)
    print(f"{len(ds)} events from {args.dataset}")
    _print_counts(ds)
    with_values = sum(e.values is not None for e in ds.entries)
    print(f"events with case values: {with_values}")
    print(f"caption-length warnings: {len(ds.warnings)}")
    print(f"digest: {ds.digest}")
    return EXIT_OK


def cmd_split(args) -> int:
    ds = ex.ingest(args.dataset)
    test, bank = ex.split_balanced(ds, args.test_size, args.seed)
    out = Path(args.out)
    ex.write_dataset(out / "test.jsonl", test)
    ex.write_dataset(out / "casebank.jsonl", bank)
    print(f"test: {len(test)} -> {out / 'test.jsonl'}")
    _print_counts(ex.Dataset(test))
    print(f"casebank: {len(bank)} -> {out / 'casebank.jsonl'}")
    return EXIT_OK


def cmd_build(args) -> int:
    ds = ex.ingest(args.casebank)
    path = Path(args.store or Path(args.out) / "casebase.jsonl")
    store = ex.build_case_base(ds.entries, _embedder(args), path,
                               checkpoint_every=args.checkpoint_every, resume=not args.no_resume)
    print(f"{len(store)} cases -> {path}")
    print(f"store digest: {store.digest()}")
    return EXIT_OK


def _sweep_and_report(args, sweep: ex.SweepConfig) -> int:
    ds = ex.ingest(args.dataset)
    store = _load_store(args.store, any(c.shots for c in sweep.cells()))
    res = ex.run_sweep(sweep, ds, store, _embedder(args), _chat_for(args), args.out, smoothing=args.smoothing)
    rep = ex.report(args.out)
    print(f"cells: {len(res.cells)} (ran {res.n_ran}, cached {res.n_cached}, failed {res.n_failed})")
    for c in res.cells:
        if c["status"] == "failed":
            print(f"  failed {c['key']}: {c['error']}", file=sys.stderr)
    for name, text in rep.tables.items():
        if name.startswith("sweep_"):
            print(text)
    print(f"report -> {Path(args.out) / 'report'}")
    return EXIT_OK if not res.n_failed else EXIT_DATA


def _common(args) -> dict:
    return dict(seed=args.seed, gateway=_gateway(args), concurrency=args.concurrency,
                temperature=args.temperature, include_cot=not args.no_cot,
                cross_type_random=args.cross_type_random, reask=args.reask)


def cmd_run(args) -> int:
    sampling = Sampling(args.sampling)
    if (sampling is Sampling.NONE) != (args.shots == 0):
        raise UsageError("--sampling None goes with --shots 0 and only then")
    sweep = ex.SweepConfig(model_ids=tuple(_models(args)[:1]), modes=(PromptMode(args.mode),),
                           samplings=(sampling,), shot_counts=(args.shots,),
                           include_baseline=args.shots == 0, **_common(args))
    return _sweep_and_report(args, sweep)


def cmd_sweep(args) -> int:
    axes = {}
    if args.modes:
        axes["modes"] = tuple(PromptMode(m) for m in args.modes)
    if args.samplings:
        axes["samplings"] = tuple(Sampling(s) for s in args.samplings)
    if args.shots:
        axes["shot_counts"] = tuple(args.shots)
    if args.no_baseline:
        axes["include_baseline"] = False
    if args.preset:
        sweep = ex.preset(args.preset, _models(args), **axes, **_common(args))
    else:
        sweep = ex.SweepConfig(model_ids=tuple(_models(args)), **axes, **_common(args))
    return _sweep_and_report(args, sweep)


def cmd_evaluate(args) -> int:
    from . import reporting
    ds = ex.ingest(args.dataset)
    run_dir = Path(args.run_dir)
    dirs = ([run_dir] if (run_dir / "records.jsonl").exists()
            else sorted(p.parent for p in run_dir.glob("cells/*/records.jsonl")))
    if not dirs:
        raise DataError(f"no records.jsonl under {run_dir}")
    rows = []
    for d in dirs:
        rep = ex.evaluate_cell(d, ds.entries, args.smoothing)
        meta_path = d / "cell.json"
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        label = reporting.CellLabel(meta.get("model_id", d.name), meta.get("mode", "?"),
                                    meta.get("sampling", "None"), meta.get("shots", 0))
        rows.append((label, rep))
    print(reporting.overall_table(rows))
    return EXIT_OK


def cmd_report(args) -> int:
    rep = ex.report(args.run_dir)
    for name, text in rep.tables.items():
        if name.endswith(".txt") and name != "missing.txt":
            print(text + "\n")
    for m in rep.missing:
        print(f"missing: {m}", file=sys.stderr)
    if not rep.cells and not rep.missing:
        print(f"no cells found under {args.run_dir}", file=sys.stderr)
    return EXIT_OK


def cmd_retain(args) -> int:
    ds = ex.ingest(args.dataset)
    store = CaseStore.load(args.store)
    res = ex.retain_from_run(args.run_dir, store, ds, _embedder(args), args.policy)
    target = args.store_out or args.store
    store.save(target)
    print(f"case base: {res.before} -> {res.after} cases (+{len(res.added)}) -> {target}")
    for eid, why in res.skipped:
        print(f"  skipped {eid}: {why}")
    if res.duplicates:
        print(f"warning: {len(res.duplicates)} events were already in the case base", file=sys.stderr)
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest, "split": cmd_split, "build-case-base": cmd_build, "run": cmd_run,
    "sweep": cmd_sweep, "evaluate": cmd_evaluate, "report": cmd_report, "retain": cmd_retain,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(e, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except GatewayError as e:
        print(f"gateway error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_GATEWAY
    except DataError as e:
        print(f"data error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
