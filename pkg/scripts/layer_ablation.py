"""Which layer's attention to read: shallow vs deep, by noise rate and held-out NLL.

    python3 scripts/layer_ablation.py --corpus runs/corpus --out runs/layers --layers 0,1,2,3
"""

import argparse
from pathlib import Path

from gamma_sweep import base_config
from sstoken.harness.plan import format_summary, grid_plan, run_plan, summarize, write_summary


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--corpus", default="runs/corpus")
    ap.add_argument("--out", default="runs/layer_ablation")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--layers", default="0,1,2,3")
    ap.add_argument("--epochs", type=int, default=1)
    args = ap.parse_args()
    base = base_config(Path(args.corpus), epochs=args.epochs)
    plan = grid_plan(base, args.out, [int(s) for s in args.seeds.split(",")], layer=[int(x) for x in args.layers.split(",")])
    summary = summarize(run_plan(plan))
    write_summary(summary, Path(args.out) / "summary.csv")
    print(format_summary(summary))


if __name__ == "__main__":
    main()
