"""Regenerate tests/data/metric_oracle_table.json from the brute-force oracle.

The table is frozen: tests compare the package against it, never against a
live oracle run. Rerun only when the micro-corpus itself changes.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

from oracles import metric_oracle as O  # noqa: E402

# Short pairs with repeated words, reorderings and stem variants.
CORPUS = [
    ("the cat sat", "the cat sat on the mat"),
    ("a b c d", "a c d"),
    ("the car brakes hard", "the car brakes hard"),
    ("cats running", "cat runs"),
    ("the truck turns left", "a truck is turning left"),
    ("brake brake brake", "brake now"),
    ("the ego car stops", "the car stopped quickly"),
    ("pedestrian crossing ahead", "a pedestrian crosses ahead of the car"),
    ("steer right and brake", "brake and steer right"),
    ("the van merges from the ramp", "a van merged from the right ramp"),
    ("oncoming car crosses the line", "the oncoming car crossed the center line"),
    ("left left right", "right left left"),
    ("it slows down", "the lead vehicle slows down sharply"),
    ("accelerate to clear the junction", "accelerating clears the junction"),
    ("no match here", "completely different words"),
    ("the the the", "the cat"),
    ("vehicles parked along the curb", "vehicle parks along a curb"),
    ("sudden stop, then swerve.", "a sudden stop, then a swerve."),
    ("he turns and turns", "turning he turns"),
    ("emergency braking is needed", "emergency braking was needed"),
]

TOY_CIDER = [
    ("the car stops", "the car stops"),
    ("a truck stops", "the truck turns"),
    ("the bus turns left", "a car turns left"),
]


def main() -> None:
    cands = [c for c, _ in CORPUS]
    refs = [r for _, r in CORPUS]
    cider_items = O.cider(cands, refs)
    rows = []
    for (c, r), cid in zip(CORPUS, cider_items):
        m, ch = O.meteor_alignment(c, r)
        rows.append({
            "candidate": c, "reference": r,
            "bleu4": O.bleu4(c, r), "rouge_l": O.rouge_l(c, r),
            "meteor": O.meteor(c, r), "meteor_matches": m, "meteor_chunks": ch,
            "cider": cid,
        })
    toy = O.cider([c for c, _ in TOY_CIDER], [r for _, r in TOY_CIDER])
    out = {
        "note": "computed by tests/oracles/metric_oracle.py via scripts/compute_metric_oracles.py",
        "pairs": rows,
        "toy_cider": {"candidates": [c for c, _ in TOY_CIDER], "references": [r for _, r in TOY_CIDER],
                      "per_item": toy},
    }
    path = ROOT / "tests" / "data" / "metric_oracle_table.json"
    path.write_text(json.dumps(out, indent=2) + "\n")
    print(f"wrote {path}")
    for row in rows:
        print(f"{row['candidate']!r:40} bleu {row['bleu4']:8.4f} rouge {row['rouge_l']:8.4f} "
              f"meteor {row['meteor']:8.4f} cider {row['cider']:8.4f}")


if __name__ == "__main__":
    main()
