"""Command line entry point: ``sstoken {gen-corpus,run,sweep,summarize,render}``.

Relative output paths are resolved against ``$SSTOKEN_OUTPUT_ROOT`` when it
is set.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from .checkpoint import load_checkpoint
from .corpus import load_corpus
from .harness.plan import (
    execute_run,
    format_summary,
    grid_plan,
    read_metrics,
    run_id,
    run_plan,
    summarize,
    write_summary,
)
from .harness.render import render_selection
from .harness.synthetic import gen_synthetic_corpus
from .selection import SelectorSpec, score_sample
from .training import RunConfig

OUTPUT_ROOT_ENV = "SSTOKEN_OUTPUT_ROOT"
_NONE_DEFAULT_TYPES = {"layer": int}


def out_path(p: str) -> Path:
    path = Path(p)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        return Path(root) / path
    return path


def _bool(s: str) -> bool:
    if s.lower() in ("1", "true", "yes"):
        return True
    if s.lower() in ("0", "false", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {s!r}")


def add_run_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="RunConfig JSON file; flags below override its keys")
    for f in dataclasses.fields(RunConfig):
        default = f.default
        if isinstance(default, bool):
            typ = _bool
        elif default is None:
            typ = _NONE_DEFAULT_TYPES.get(f.name, str)
        else:
            typ = type(default)
        parser.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=typ, default=None,
                            help=f"(default {default!r})")


def run_config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(RunConfig) if getattr(args, f.name) is not None}
    return cfg.replace(**overrides)


def _floats(s: str) -> list[float]:
    return [float(x) for x in s.split(",") if x]


def _ints(s: str) -> list[int]:
    return [int(x) for x in s.split(",") if x]


def cmd_gen_corpus(args) -> int:
    paths = gen_synthetic_corpus(out_path(args.out), args.n_samples, args.noise_rate, args.seed,
                                 n_heldout=args.n_heldout, n_reference=args.n_reference)
    for name, p in dataclasses.asdict(paths).items():
        print(f"{name}: {p}")
    return 0


def cmd_run(args) -> int:
    cfg = run_config_from_args(args)
    out = out_path(args.out)
    row = execute_run(cfg, out / run_id(cfg))
    print(json.dumps(row.record(), sort_keys=True))
    return 0


_PRESETS = {"gamma": ("gamma", [0.0, 0.25, 0.5, 0.75, 1.0]), "rho": ("rho", [0.2, 0.4, 0.6, 0.8])}


def cmd_sweep(args) -> int:
    base = run_config_from_args(args)
    axes = {}
    if args.preset:
        name, values = _PRESETS[args.preset]
        axes[name] = values
    for spec in args.axis or []:
        name, _, values = spec.partition("=")
        kind = type(getattr(base, name)) if getattr(base, name) is not None else _NONE_DEFAULT_TYPES.get(name, str)
        axes[name] = [kind(v) for v in values.split(",")]
    if not axes:
        print("sweep needs --preset or at least one --axis name=v1,v2", file=sys.stderr)
        return 2
    plan = grid_plan(base, out_path(args.out), _ints(args.seeds), **axes)
    rows = run_plan(plan)
    summary = summarize(rows) if rows else []
    if summary:
        write_summary(summary, plan.out_dir / "summary.csv")
        print(format_summary(summary))
    print(f"{len(rows)}/{len(plan.runs)} runs complete; metrics in {plan.out_dir}")
    return 0 if len(rows) == len(plan.runs) else 1


def cmd_summarize(args) -> int:
    rows = read_metrics(args.metrics)
    summary = summarize(rows)
    if args.out:
        write_summary(summary, out_path(args.out))
    print(format_summary(summary))
    return 0


def cmd_render(args) -> int:
    run_dir = Path(args.run_dir)
    cfg = RunConfig.from_file(run_dir / "config.json")
    corpus = load_corpus(args.corpus or cfg.train_path)
    final, _ = load_checkpoint(run_dir / "final.ckpt")
    history, _ = load_checkpoint(run_dir / "history.ckpt")
    sample = corpus[args.index]
    rho = args.rho if args.rho is not None else cfg.rho
    gamma = args.gamma if args.gamma is not None else cfg.gamma
    spec = SelectorSpec(kind="sstoken", gamma=gamma, rho=rho, layer=cfg.layer)
    scores, mask = score_sample(final, history, sample, spec)
    _, rel_only = score_sample(final, history, sample, spec.replace(gamma=1.0))
    doc = render_selection(sample, scores, mask, rel_only, fmt=args.format, title=f"{run_dir.name} sample {args.index}")
    if args.out:
        out_path(args.out).write_text(doc, encoding="utf-8")
    else:
        print(doc)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sstoken", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="write a synthetic noisy corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n-samples", type=int, default=2000)
    p.add_argument("--noise-rate", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-heldout", type=int)
    p.add_argument("--n-reference", type=int)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("run", help="train one configuration")
    p.add_argument("--out", default="runs")
    add_run_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a grid of configurations")
    p.add_argument("--out", required=True)
    p.add_argument("--preset", choices=sorted(_PRESETS))
    p.add_argument("--axis", action="append", help="name=v1,v2,... (repeatable)")
    p.add_argument("--seeds", default="0")
    add_run_config_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("summarize", help="aggregate a metrics.jsonl across seeds")
    p.add_argument("metrics")
    p.add_argument("--out")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("render", help="visualize one sample's token selection")
    p.add_argument("run_dir")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--corpus")
    p.add_argument("--gamma", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--format", choices=("html", "text"), default="html")
    p.add_argument("--out")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
