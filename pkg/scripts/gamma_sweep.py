"""Sweep the fusion weight gamma over {0, 0.25, 0.5, 0.75, 1} across seeds.

    python3 scripts/gamma_sweep.py --corpus runs/corpus --out runs/gamma --seeds 0,1,2
"""

import argparse
from pathlib import Path

from sstoken.harness.plan import format_summary, gamma_sweep, run_plan, summarize, write_summary
from sstoken.harness.synthetic import gen_synthetic_corpus
from sstoken.training import RunConfig


def base_config(corpus: Path, **kw) -> RunConfig:
    if not (corpus / "train.jsonl").exists():
        gen_synthetic_corpus(corpus, 2000, 0.3, seed=0)
    return RunConfig(
        train_path=str(corpus / "train.jsonl"), heldout_path=str(corpus / "heldout.jsonl"),
        noise_path=str(corpus / "train.noise.jsonl"), reference_path=str(corpus / "reference.jsonl"), **kw,
    )


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--corpus", default="runs/corpus")
    ap.add_argument("--out", default="runs/gamma_sweep")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--epochs", type=int, default=1)
    args = ap.parse_args()
    plan = gamma_sweep(base_config(Path(args.corpus), epochs=args.epochs), args.out, [int(s) for s in args.seeds.split(",")])
    summary = summarize(run_plan(plan))
    write_summary(summary, Path(args.out) / "summary.csv")
    print(format_summary(summary))


if __name__ == "__main__":
    main()
