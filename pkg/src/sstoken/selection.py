"""Token scoring and top-k selection for ssToken and the baseline selectors.

Selectors:

* ``full`` - every response token.
* ``random`` - seeded uniform scores, per-sample top-k.
* ``rho1`` - per-sample top-k by excess loss against a reference model.
* ``tokencleaning_global`` - pool-wide top-k by excess loss (fixed reference).
* ``sstoken`` - per-sample top-k by
  ``gamma * minmax(REL) + (1 - gamma) * AttnScore``.

All rankings break ties by ascending token position (and, pool-wide, by
ascending sample order first).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from .corpus import TokenizedSample
from .errors import DomainError, LengthMismatch
from .model import ModelSnapshot, batch_attn_scores, batch_logprobs

SELECTORS = ("full", "random", "rho1", "tokencleaning_global", "sstoken")
DEFAULT_GAMMA = 0.5
DEFAULT_RHO = 0.6


def _as_array(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def excess_loss(cur, ref) -> np.ndarray:
    """EL = L_cur - L_ref, from log-probs of the current and reference model."""
    cur, ref = _as_array(cur), _as_array(ref)
    if cur.shape != ref.shape:
        raise LengthMismatch(f"{cur.shape} vs {ref.shape}")
    return ref - cur


def retrospective_excess_loss(his, cur) -> np.ndarray:
    """REL = L_his - L_cur; positive where the current model beats its history."""
    his, cur = _as_array(his), _as_array(cur)
    if his.shape != cur.shape:
        raise LengthMismatch(f"{his.shape} vs {cur.shape}")
    return cur - his


def normalize_rel(rel) -> np.ndarray:
    """Per-sample min-max scaling to [0, 1]; a constant vector maps to 0.5."""
    rel = _as_array(rel)
    lo, hi = rel.min(), rel.max()
    if hi == lo:
        return np.full_like(rel, 0.5)
    return (rel - lo) / (hi - lo)


def fuse_scores(rel_norm, attn, gamma: float) -> np.ndarray:
    rel_norm, attn = _as_array(rel_norm), _as_array(attn)
    if rel_norm.shape != attn.shape:
        raise LengthMismatch(f"{rel_norm.shape} vs {attn.shape}")
    if not 0.0 <= gamma <= 1.0:
        raise DomainError(f"gamma={gamma} outside [0, 1]")
    for name, v in (("rel_norm", rel_norm), ("attn", attn)):
        if v.size and not (np.all(v >= 0.0) and np.all(v <= 1.0)):
            raise DomainError(f"{name} has entries outside [0, 1]")
    return np.clip(gamma * rel_norm + (1.0 - gamma) * attn, 0.0, 1.0)


def k_for(rho: float, n: int) -> int:
    """max(1, round-half-up(rho * n))."""
    return max(1, math.floor(rho * n + 0.5))


@dataclass(frozen=True)
class SelectionMask:
    bits: np.ndarray
    ratio: float

    @property
    def k(self) -> int:
        return int(self.bits.sum())

    @property
    def positions(self) -> np.ndarray:
        return np.flatnonzero(self.bits)

    def bitstring(self) -> str:
        return "".join("1" if b else "0" for b in self.bits)


def _rank_order(scores: np.ndarray) -> np.ndarray:
    if np.isnan(scores).any():
        raise DomainError("scores contain NaN")
    # stable sort on the negated scores: earlier position wins ties
    return np.argsort(-scores, kind="stable")


def select_topk(scores, rho: float) -> SelectionMask:
    scores = _as_array(scores)
    if scores.ndim != 1 or scores.size == 0:
        raise DomainError("need a non-empty score vector")
    if not 0.0 < rho <= 1.0:
        raise DomainError(f"rho={rho} outside (0, 1]")
    k = k_for(rho, scores.size)
    bits = np.zeros(scores.size, dtype=bool)
    bits[_rank_order(scores)[:k]] = True
    return SelectionMask(bits, rho)


def global_budget(rho: float, n_tokens: int) -> int:
    # tolerance guards ceil against products like 0.6 * 10 = 6.000000000000001
    return min(n_tokens, math.ceil(rho * n_tokens - 1e-9))


def select_global_topk(scores: Sequence, rho: float) -> list[SelectionMask]:
    """Pool-wide top ceil(rho * N) tokens; samples may end up with k = 0."""
    vectors = [_as_array(s) for s in scores]
    if not vectors:
        raise DomainError("empty pool")
    if not 0.0 < rho <= 1.0:
        raise DomainError(f"rho={rho} outside (0, 1]")
    flat = np.concatenate(vectors)
    budget = global_budget(rho, flat.size)
    chosen = np.zeros(flat.size, dtype=bool)
    chosen[_rank_order(flat)[:budget]] = True
    bounds = np.cumsum([0] + [v.size for v in vectors])
    return [SelectionMask(chosen[bounds[i] : bounds[i + 1]].copy(), rho) for i in range(len(vectors))]


@dataclass(frozen=True)
class SelectorSpec:
    kind: str = "sstoken"
    gamma: float = DEFAULT_GAMMA
    rho: float = DEFAULT_RHO
    # attention layer override; None keeps the model's configured layer
    layer: int | None = None
    reference: ModelSnapshot | None = field(default=None, repr=False, compare=False)
    normalize_attn: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SELECTORS:
            raise DomainError(f"unknown selector {self.kind!r}; expected one of {SELECTORS}")
        if not 0.0 <= self.gamma <= 1.0:
            raise DomainError(f"gamma={self.gamma} outside [0, 1]")
        if not 0.0 < self.rho <= 1.0:
            raise DomainError(f"rho={self.rho} outside (0, 1]")
        if self.kind in ("rho1", "tokencleaning_global") and self.reference is None:
            raise DomainError(f"selector {self.kind!r} needs a reference model")

    def replace(self, **kw) -> "SelectorSpec":
        import dataclasses

        return dataclasses.replace(self, **kw)


@dataclass(frozen=True)
class TokenScores:
    kind: str
    fused: np.ndarray
    rel: np.ndarray | None = None
    rel_norm: np.ndarray | None = None
    attn: np.ndarray | None = None
    gamma: float | None = None


def random_scores(seed: int, sample_id: int, step: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, sample_id, step]).random(n)


def sstoken_scores(lp_cur, lp_his, attn, gamma: float, normalize_attn: bool = False) -> TokenScores:
    rel = retrospective_excess_loss(lp_his, lp_cur)
    rel_norm = normalize_rel(rel)
    attn = _as_array(attn)
    if normalize_attn:
        attn = normalize_rel(attn)
    return TokenScores("sstoken", fuse_scores(rel_norm, attn, gamma), rel, rel_norm, attn, gamma)


def score_batch(
    cur: ModelSnapshot,
    his: ModelSnapshot | None,
    samples: Sequence[TokenizedSample],
    spec: SelectorSpec,
    step: int = 0,
) -> list[tuple[TokenScores, SelectionMask]]:
    """Score and select every sample of a batch with per-sample selectors.

    Current and history log-probs are computed on the same padded batch, so
    identical snapshots give exactly zero REL.
    """
    kind = spec.kind
    if kind == "tokencleaning_global":
        raise DomainError("global selection needs the whole pool; use score_pool")
    out = []
    if kind == "full":
        for s in samples:
            ones = np.ones(s.resp_len)
            out.append((TokenScores("full", ones), SelectionMask(ones.astype(bool), 1.0)))
        return out
    if kind == "random":
        for s in samples:
            sc = random_scores(spec.seed, s.sample_id, step, s.resp_len)
            out.append((TokenScores("random", sc), select_topk(sc, spec.rho)))
        return out
    if kind == "rho1":
        lp_cur = batch_logprobs(cur, samples)
        lp_ref = batch_logprobs(spec.reference, samples)
        for a, b in zip(lp_cur, lp_ref):
            el = excess_loss(a, b)
            out.append((TokenScores("rho1", el, rel=el), select_topk(el, spec.rho)))
        return out

    if his is None:
        raise DomainError("sstoken needs a history model")
    if spec.layer is not None and spec.layer != cur.config.attn_layer_index:
        cur = cur.with_config(attn_layer_index=spec.layer)
    lp_cur, captured = batch_logprobs(cur, samples, capture=True)
    lp_his = batch_logprobs(his, samples)
    attn = batch_attn_scores(cur, samples, captured)
    for a, h, at in zip(lp_cur, lp_his, attn):
        ts = sstoken_scores(a, h, at, spec.gamma, spec.normalize_attn)
        out.append((ts, select_topk(ts.fused, spec.rho)))
    return out


def score_sample(cur: ModelSnapshot, his: ModelSnapshot | None, sample: TokenizedSample, spec: SelectorSpec, step: int = 0):
    return score_batch(cur, his, [sample], spec, step)[0]


def score_pool(
    cur: ModelSnapshot, samples: Sequence[TokenizedSample], spec: SelectorSpec, batch_size: int = 32
) -> list[tuple[TokenScores, SelectionMask]]:
    """Fixed-model global selection: EL against ``spec.reference`` over the pool."""
    els = []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i : i + batch_size]
        for a, b in zip(batch_logprobs(cur, chunk), batch_logprobs(spec.reference, chunk)):
            els.append(excess_loss(a, b))
    masks = select_global_topk(els, spec.rho)
    return [(TokenScores("tokencleaning_global", el, rel=el), m) for el, m in zip(els, masks)]


# ---------------------------------------------------------------------------
# mask export


def mask_record(sample_index: int, scores: TokenScores, mask: SelectionMask, gamma: float | None = None) -> dict:
    n = mask.bits.size

    def col(v):
        return [None] * n if v is None else [float(x) for x in v]

    fused, rel_norm, attn = col(scores.fused), col(scores.rel_norm), col(scores.attn)
    return {
        "sample_index": int(sample_index),
        "selector": scores.kind,
        "rho": float(mask.ratio),
        "gamma": gamma if gamma is not None else scores.gamma,
        "k": mask.k,
        "bits": mask.bitstring(),
        "tokens": [[f, r, a] for f, r, a in zip(fused, rel_norm, attn)],
    }


def export_masks(path: str | Path, records: Iterable[dict]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_masks(path: str | Path) -> list[dict]:
    with Path(path).open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def bits_from_string(bits: str) -> np.ndarray:
    return np.array([c == "1" for c in bits], dtype=bool)
