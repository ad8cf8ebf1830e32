"""History model bookkeeping: frozen base snapshot or EMA of the trajectory."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .corpus import TokenizedSample
from .errors import DomainError, ShapeError
from .model import ModelSnapshot, forward_logprobs


@dataclass(frozen=True)
class HistoryPolicy:
    mode: str = "frozen_base"
    alpha: float = 0.99
    update_every: int = 50

    def __post_init__(self):
        if self.mode not in ("frozen_base", "ema"):
            raise DomainError(f"unknown history mode {self.mode!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise DomainError(f"alpha={self.alpha} outside [0, 1]")
        if self.update_every < 1:
            raise DomainError("update_every must be >= 1")


def init_history(base: ModelSnapshot) -> ModelSnapshot:
    return base.clone().replace(version="history")


def ema_update(his: ModelSnapshot, cur: ModelSnapshot, alpha: float) -> ModelSnapshot:
    """alpha * his + (1 - alpha) * cur, per parameter."""
    if his.config != cur.config:
        raise ShapeError("history and current configs differ")
    if not 0.0 <= alpha <= 1.0:
        raise DomainError(f"alpha={alpha} outside [0, 1]")
    if alpha == 1.0:
        return his.clone()
    if alpha == 0.0:
        return cur.clone().replace(version=his.version)
    params = {}
    for name, h in his.params.items():
        c = cur.params[name].detach()
        params[name] = alpha * h + (1.0 - alpha) * c
    return his.replace(params)


def maybe_update(policy: HistoryPolicy, step: int, his: ModelSnapshot, cur: ModelSnapshot) -> ModelSnapshot:
    if policy.mode == "ema" and step % policy.update_every == 0:
        return ema_update(his, cur, policy.alpha)
    return his


class HistoryCache:
    """Per-sample history log-probs, valid only for a frozen history model."""

    def __init__(self, history: ModelSnapshot, policy: HistoryPolicy):
        if policy.mode != "frozen_base":
            raise DomainError("history log-probs may only be cached in frozen_base mode")
        self.history = history
        self._store: dict[int, torch.Tensor] = {}

    def logprobs(self, sample: TokenizedSample) -> torch.Tensor:
        hit = self._store.get(sample.sample_id)
        if hit is None:
            hit = self._store[sample.sample_id] = forward_logprobs(self.history, sample)
        return hit

    def __len__(self) -> int:
        return len(self._store)
