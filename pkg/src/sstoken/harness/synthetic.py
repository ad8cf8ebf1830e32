"""Synthetic prompt -> response tasks with injected token noise.

Tasks are deterministic (copy, reverse, small-integer addition), so every
response byte has a single correct value. Each response byte is replaced,
independently with probability ``noise_rate``, by a different random
printable byte; replaced positions are the ground-truth noise and go to a
sidecar file. The held-out and reference splits are always clean.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..corpus import RawRecord, write_records

LETTERS = "abcdefghijklmnopqrstuvwxyz"
PRINTABLE = [chr(c) for c in range(0x21, 0x7F)]
TASKS = ("copy", "reverse", "add")


def make_task(rng: np.random.Generator) -> RawRecord:
    task = TASKS[int(rng.integers(len(TASKS)))]
    if task == "add":
        a, b = (int(x) for x in rng.integers(0, 500, size=2))
        return RawRecord(f"add: {a}+{b}", str(a + b))
    n = int(rng.integers(4, 13))
    word = "".join(LETTERS[i] for i in rng.integers(0, len(LETTERS), size=n))
    return RawRecord(f"{task}: {word}", word if task == "copy" else word[::-1])


def inject_noise(response: str, p: float, rng: np.random.Generator) -> tuple[str, list[int]]:
    chars = list(response)
    positions = []
    for i, ch in enumerate(chars):
        if rng.random() < p:
            choices = [c for c in PRINTABLE if c != ch]
            chars[i] = choices[int(rng.integers(len(choices)))]
            positions.append(i)
    return "".join(chars), positions


@dataclass(frozen=True)
class SyntheticPaths:
    train: Path
    noise: Path
    heldout: Path
    reference: Path


def gen_synthetic_corpus(
    out_dir: str | Path,
    n_samples: int,
    noise_rate: float,
    seed: int = 0,
    n_heldout: int | None = None,
    n_reference: int | None = None,
) -> SyntheticPaths:
    """Write train/heldout/reference JSONL files plus the noise sidecar.

    Sidecar lines are ``{"index": i, "noise_positions": [...]}`` with
    positions counted from the first response token.
    """
    if not 0.0 <= noise_rate < 1.0:
        raise ValueError(f"noise_rate={noise_rate} outside [0, 1)")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_heldout = max(1, n_samples // 10) if n_heldout is None else n_heldout
    n_reference = max(1, n_samples // 5) if n_reference is None else n_reference
    task_rng, noise_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))

    train, sidecar = [], []
    for i in range(n_samples):
        rec = make_task(task_rng)
        noisy, pos = inject_noise(rec.response, noise_rate, noise_rng)
        train.append(RawRecord(rec.prompt, noisy))
        sidecar.append({"index": i, "noise_positions": pos})
    heldout = [make_task(task_rng) for _ in range(n_heldout)]
    reference = [make_task(task_rng) for _ in range(n_reference)]

    paths = SyntheticPaths(out / "train.jsonl", out / "train.noise.jsonl", out / "heldout.jsonl", out / "reference.jsonl")
    write_records(paths.train, train)
    write_records(paths.heldout, heldout)
    write_records(paths.reference, reference)
    with paths.noise.open("w", encoding="utf-8") as fh:
        for rec in sidecar:
            fh.write(json.dumps(rec) + "\n")
    return paths


def read_noise_sidecar(path: str | Path) -> dict[int, set[int]]:
    with Path(path).open(encoding="utf-8") as fh:
        recs = [json.loads(line) for line in fh if line.strip()]
    return {r["index"]: set(r["noise_positions"]) for r in recs}
