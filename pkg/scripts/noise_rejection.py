"""Noise-token rejection on the synthetic corpus.

Trains one full-data epoch per seed, scores the training pool with ssToken
against the frozen base, and compares the noise fraction among selected
tokens with uniform random selection at the same ratio.

    python3 scripts/noise_rejection.py --out runs/noise --seeds 0,1,2
"""

import argparse
import json
from pathlib import Path

import numpy as np

from sstoken.harness.experiments import noise_rejection


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/noise_rejection")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--n-samples", type=int, default=2000)
    ap.add_argument("--noise-rate", type=float, default=0.3)
    ap.add_argument("--gamma", type=float, default=0.5)
    ap.add_argument("--rho", type=float, default=0.6)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for seed in (int(s) for s in args.seeds.split(",")):
        r = noise_rejection(out, seed, args.n_samples, args.noise_rate, args.gamma, args.rho)
        results.append(r)
        print(f"seed {seed}: sstoken {r.sstoken_rate:.3f}  random {r.random_rate:.3f}  gap {r.gap:+.3f}  ({r.seconds:.0f}s)")
    gap = float(np.mean([r.gap for r in results]))
    print(f"mean gap over {len(results)} seeds: {gap:+.3f}")
    with (out / "results.jsonl").open("w") as fh:
        for r in results:
            fh.write(json.dumps({"seed": r.seed, "sstoken_rate": r.sstoken_rate, "random_rate": r.random_rate}) + "\n")


if __name__ == "__main__":
    main()
