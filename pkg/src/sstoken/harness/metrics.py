"""Selection-quality metrics computed from masks and the noise sidecar."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from ..corpus import TokenizedSample
from ..model import ModelSnapshot
from ..selection import SelectionMask, SelectorSpec, TokenScores, score_batch, score_pool


def noise_selection_rate(
    samples: Sequence[TokenizedSample], masks: Sequence[SelectionMask], noise: Mapping[int, set[int]]
) -> float:
    """|selected & noisy| / |selected| pooled over samples."""
    selected = hit = 0
    for s, m in zip(samples, masks):
        pos = m.positions
        selected += pos.size
        bad = noise.get(s.sample_id, set())
        hit += sum(1 for p in pos if int(p) in bad)
    return hit / selected if selected else float("nan")


def mask_overlap(masks: Sequence[SelectionMask], others: Sequence[SelectionMask]) -> float:
    """Fraction of the tokens selected by ``masks`` also selected by ``others``."""
    inter = sum(int(np.sum(a.bits & b.bits)) for a, b in zip(masks, others))
    total = sum(a.k for a in masks)
    return inter / total if total else float("nan")


def score_samples(
    cur: ModelSnapshot,
    his: ModelSnapshot | None,
    samples: Sequence[TokenizedSample],
    spec: SelectorSpec,
    batch_size: int = 32,
    step: int = 0,
) -> list[tuple[TokenScores, SelectionMask]]:
    if spec.kind == "tokencleaning_global":
        return score_pool(cur, samples, spec, batch_size)
    out = []
    for i in range(0, len(samples), batch_size):
        out.extend(score_batch(cur, his, samples[i : i + batch_size], spec, step))
    return out


def selection_noise_rates(
    cur: ModelSnapshot,
    his: ModelSnapshot,
    samples: Sequence[TokenizedSample],
    noise: Mapping[int, set[int]],
    spec: SelectorSpec,
    random_seed: int = 0,
) -> tuple[float, float]:
    """Noise rate of ``spec``'s selection and of a uniform-random one at the same ratio."""
    masks = [m for _, m in score_samples(cur, his, samples, spec)]
    rnd = SelectorSpec(kind="random", rho=spec.rho, seed=random_seed)
    rmasks = [m for _, m in score_samples(cur, his, samples, rnd)]
    return noise_selection_rate(samples, masks, noise), noise_selection_rate(samples, rmasks, noise)
