"""Run the seven-event smoke suite against a live endpoint.

    python3 scripts/live_smoke.py --endpoint http://localhost:11434 \
        --chat-model llama3.3:70b --embed-model nomic-embed-text
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from evasive_cbr.errors import GatewayError
from evasive_cbr.gateway import PROFILES, GatewayConfig
from evasive_cbr.smoke import SMOKE_EVENTS, run_smoke


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--endpoint", default="http://localhost:11434")
    ap.add_argument("--profile", choices=sorted(PROFILES), default="ollama")
    ap.add_argument("--chat-model", default="llama3.3:70b")
    ap.add_argument("--embed-model", default="nomic-embed-text")
    ap.add_argument("--shots", type=int, default=1)
    ap.add_argument("--timeout-ms", type=int, default=300_000)
    args = ap.parse_args(argv)

    cfg = replace(GatewayConfig.from_env(profile=PROFILES[args.profile]), base_url=args.endpoint, timeout_ms=args.timeout_ms)
    try:
        res = run_smoke(cfg, args.chat_model, args.embed_model, shots=args.shots)
    except GatewayError as exc:
        print(f"endpoint unusable: {exc}", file=sys.stderr)
        return 3
    gold = {e.event_id: e.ground_truth_maneuver for e in SMOKE_EVENTS}
    for r in res.records:
        if r.ok:
            got = r.decision.ego_car_evasive_maneuver
            mark = "ok " if got is gold[r.event_id] else "-- "
            print(f"{mark}{r.event_id:18s} {getattr(got, 'value', got)}")
        else:
            print(f"ERR{r.event_id:18s} {r.error_type}: {r.error_message}")
    print(f"accuracy {res.accuracy:.3f}  schema-valid {res.all_valid}")
    return 0 if res.all_valid else 1


if __name__ == "__main__":
    sys.exit(main())
