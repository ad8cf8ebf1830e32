"""Sweep the selection ratio rho over {0.2, 0.4, 0.6, 0.8} for ssToken and random selection.

    python3 scripts/rho_sweep.py --corpus runs/corpus --out runs/rho --seeds 0,1,2
"""

import argparse
from pathlib import Path

from gamma_sweep import base_config
from sstoken.harness.plan import ExperimentPlan, format_summary, rho_sweep, run_plan, summarize, write_summary


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--corpus", default="runs/corpus")
    ap.add_argument("--out", default="runs/rho_sweep")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--selectors", default="sstoken,random")
    ap.add_argument("--epochs", type=int, default=1)
    args = ap.parse_args()
    base = base_config(Path(args.corpus), epochs=args.epochs)
    seeds = [int(s) for s in args.seeds.split(",")]
    runs = []
    for kind in args.selectors.split(","):
        runs.extend(rho_sweep(base.replace(selector=kind), args.out, seeds).runs)
    summary = summarize(run_plan(ExperimentPlan(runs, Path(args.out))))
    write_summary(summary, Path(args.out) / "summary.csv")
    print(format_summary(summary))


if __name__ == "__main__":
    main()
