"""Held-out NLL after ssToken training vs full-data and random selection.

All arms start from the same base and take the same number of steps.

    python3 scripts/quality.py --out runs/quality --seeds 0,1,2 --selectors full,sstoken,random
"""

import argparse
import json
from pathlib import Path

import numpy as np

from sstoken.harness.experiments import QUALITY_CONFIG, quality_comparison


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/quality")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--selectors", default="full,sstoken")
    ap.add_argument("--epochs", type=int, default=QUALITY_CONFIG.epochs)
    ap.add_argument("--n-samples", type=int, default=2000)
    ap.add_argument("--noise-rate", type=float, default=0.3)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    selectors = tuple(args.selectors.split(","))
    cfg = QUALITY_CONFIG.replace(epochs=args.epochs)
    results = []
    for seed in (int(s) for s in args.seeds.split(",")):
        r = quality_comparison(out, seed, selectors, args.n_samples, args.noise_rate, cfg)
        results.append(r)
        print(f"seed {seed}: " + "  ".join(f"{k} {v:.4f}" for k, v in r.heldout_nll.items()) + f"  ({r.seconds:.0f}s)")
    for k in selectors:
        print(f"{k:>10}: mean held-out NLL {np.mean([r.heldout_nll[k] for r in results]):.4f}")
    with (out / "results.jsonl").open("w") as fh:
        for r in results:
            fh.write(json.dumps({"seed": r.seed, "heldout_nll": r.heldout_nll, "steps": r.steps}) + "\n")


if __name__ == "__main__":
    main()
