"""Write the synthetic 1000-event dataset (143 per risk type, 142 pedestrian events).

    python3 scripts/make_synthetic_dataset.py data/synthetic.jsonl --seed 7
"""

from __future__ import annotations

import argparse

from evasive_cbr.experiment import Dataset, write_dataset
from evasive_cbr.synthetic import generate


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("path")
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    entries = generate(seed=args.seed)
    write_dataset(args.path, entries)
    ds = Dataset(entries)
    print(f"{len(ds)} events -> {args.path}")
    for rt, n in ds.counts().items():
        print(f"  {rt.value:<40} {n}")


if __name__ == "__main__":
    main()
