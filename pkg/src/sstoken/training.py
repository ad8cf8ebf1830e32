"""Selection-masked SFT loss, gradients, AdamW, and the training loop."""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .corpus import Corpus, TokenizedSample
from .errors import EmptyMask, LengthMismatch, NonFiniteGradient, ShapeError
from .history import HistoryPolicy, init_history, maybe_update
from .model import (
    ModelConfig,
    ModelSnapshot,
    forward_logits,
    forward_logprobs,
    init_model,
    pad_batch,
    token_logprobs_from_logits,
)
from .selection import SelectionMask, SelectorSpec, score_batch, score_pool

logger = logging.getLogger(__name__)

DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class RunConfig:
    """Everything that defines one training run. Serialized as flat JSON."""

    selector: str = "sstoken"
    gamma: float = 0.5
    rho: float = 0.6
    normalize_attn: bool = False
    # history model
    history_mode: str = "frozen_base"
    alpha: float = 0.99
    history_update_every: int = 50
    # model
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 512
    max_seq_len: int = 256
    layer: int | None = None
    # optimization
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    epochs: int = 1
    batch_size: int = 16
    dtype: str = "float32"
    seed: int = 0
    # paths
    train_path: str | None = None
    heldout_path: str | None = None
    noise_path: str | None = None
    reference_path: str | None = None
    init_checkpoint: str | None = None

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            d_model=self.d_model, n_layers=self.n_layers, n_heads=self.n_heads,
            d_ff=self.d_ff, max_seq_len=self.max_seq_len, attn_layer_index=self.layer,
        )

    def selector_spec(self, reference: ModelSnapshot | None = None) -> SelectorSpec:
        return SelectorSpec(
            kind=self.selector, gamma=self.gamma, rho=self.rho, layer=self.layer,
            reference=reference, normalize_attn=self.normalize_attn, seed=self.seed,
        )

    def history_policy(self) -> HistoryPolicy:
        return HistoryPolicy(self.history_mode, self.alpha, self.history_update_every)

    @property
    def torch_dtype(self) -> torch.dtype:
        return DTYPES[self.dtype]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown RunConfig keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_file(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


@dataclass
class MaskedBatch:
    samples: list[TokenizedSample]
    masks: list[SelectionMask]

    def __post_init__(self):
        if len(self.samples) != len(self.masks):
            raise LengthMismatch("one mask per sample required")
        for s, m in zip(self.samples, self.masks):
            if m.bits.size != s.resp_len:
                raise LengthMismatch(f"mask length {m.bits.size} != resp_len {s.resp_len}")
            if m.k == 0:
                raise EmptyMask(f"sample {s.sample_id} has no selected token")


def _loss_weights(batch: MaskedBatch, T: int, dtype) -> torch.Tensor:
    w = torch.zeros(len(batch.samples), T, dtype=dtype)
    for b, (s, m) in enumerate(zip(batch.samples, batch.masks)):
        w[b, s.prompt_len : s.total_len] = torch.from_numpy(m.bits.astype(np.float64) / m.k).to(dtype)
    return w


def _masked_loss(params: dict[str, torch.Tensor], model: ModelSnapshot, batch: MaskedBatch) -> torch.Tensor:
    ids = pad_batch(batch.samples)
    logits, _, _ = forward_logits(model.replace(params), ids)
    lp = token_logprobs_from_logits(logits, ids)
    w = _loss_weights(batch, ids.shape[1], lp.dtype)
    return -(lp * w).sum() / len(batch.samples)


def masked_loss(model: ModelSnapshot, batch: MaskedBatch) -> float:
    """Mean over samples of the mean NLL of each sample's selected tokens.

    Unselected tokens still pass through the forward pass as context.
    """
    with torch.no_grad():
        return float(_masked_loss(model.params, model, batch))


def value_and_grad(model: ModelSnapshot, batch: MaskedBatch, scale: float = 1.0):
    leaves = {k: v.detach().clone().requires_grad_(True) for k, v in model.params.items()}
    loss = _masked_loss(leaves, model, batch) * scale
    names = list(leaves)
    grads = torch.autograd.grad(loss, [leaves[n] for n in names])
    return float(loss.detach()), dict(zip(names, grads))


def backward(model: ModelSnapshot, batch: MaskedBatch, scale: float = 1.0) -> dict[str, torch.Tensor]:
    """Gradients of ``scale * masked_loss`` with respect to every parameter."""
    return value_and_grad(model, batch, scale)[1]


def sample_nll(model: ModelSnapshot, sample: TokenizedSample) -> float:
    """Plain SFT loss: mean NLL over all response tokens."""
    return float(-forward_logprobs(model, sample).mean())


@dataclass
class OptimizerState:
    step: int
    m: dict[str, torch.Tensor]
    v: dict[str, torch.Tensor]
    lr: float = 3e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01

    @classmethod
    def fresh(cls, model: ModelSnapshot, **hyper) -> "OptimizerState":
        zeros = {k: torch.zeros_like(v) for k, v in model.params.items()}
        return cls(0, zeros, {k: z.clone() for k, z in zeros.items()}, **hyper)


def optimizer_step(model: ModelSnapshot, grads: dict[str, torch.Tensor], state: OptimizerState):
    """One AdamW update with decoupled weight decay. Inputs are left untouched."""
    if set(grads) != set(model.params):
        raise ShapeError("gradient names do not match parameters")
    for name, g in grads.items():
        if g.shape != model.params[name].shape:
            raise ShapeError(f"{name}: gradient shape {tuple(g.shape)} != {tuple(model.params[name].shape)}")
        if not torch.isfinite(g).all():
            raise NonFiniteGradient(f"non-finite gradient in {name}")
    t = state.step + 1
    b1, b2 = state.betas
    bc1, bc2 = 1.0 - b1**t, 1.0 - b2**t
    params, m_new, v_new = {}, {}, {}
    with torch.no_grad():
        for name, p in model.params.items():
            g = grads[name].to(p.dtype)
            m = b1 * state.m[name] + (1.0 - b1) * g
            v = b2 * state.v[name] + (1.0 - b2) * g * g
            update = (m / bc1) / ((v / bc2).sqrt() + state.eps)
            params[name] = p * (1.0 - state.lr * state.weight_decay) - state.lr * update
            m_new[name], v_new[name] = m, v
    new_state = dataclasses.replace(state, step=t, m=m_new, v=v_new)
    return model.replace(params, version=f"step-{t}"), new_state


@torch.no_grad()
def evaluate_nll(model: ModelSnapshot, samples: Sequence[TokenizedSample], batch_size: int = 32) -> float:
    """Token-weighted mean NLL over all response tokens of ``samples``."""
    total, count = 0.0, 0
    for i in range(0, len(samples), batch_size):
        chunk = samples[i : i + batch_size]
        ids = pad_batch(chunk)
        logits, _, _ = forward_logits(model, ids)
        lp = token_logprobs_from_logits(logits, ids)
        for b, s in enumerate(chunk):
            total -= float(lp[b, s.prompt_len : s.total_len].double().sum())
            count += s.resp_len
    return total / count


@dataclass
class TrainReport:
    steps: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)
    # wall-clock is kept apart so the other records stay reproducible bitwise
    step_seconds: list[float] = field(default_factory=list)
    base: ModelSnapshot | None = field(default=None, repr=False)
    history: ModelSnapshot | None = field(default=None, repr=False)

    @property
    def final_heldout_nll(self) -> float | None:
        return self.epochs[-1]["heldout_nll"] if self.epochs else None

    def write(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for rec in self.steps:
                fh.write(json.dumps({"type": "step", **rec}, sort_keys=True) + "\n")
            for rec in self.epochs:
                fh.write(json.dumps({"type": "epoch", **rec}, sort_keys=True) + "\n")


def train(
    corpus: Corpus | Sequence[TokenizedSample],
    spec: SelectorSpec,
    config: RunConfig,
    heldout: Sequence[TokenizedSample] | None = None,
    base: ModelSnapshot | None = None,
) -> tuple[ModelSnapshot, TrainReport]:
    """Fine-tune with token selection; one optimizer step per batch.

    Per step: score the batch under the current and history models, build
    masks, take a gradient step on the masked loss, then let the history
    policy decide whether to refresh the history snapshot.
    """
    samples = list(corpus)
    if not samples:
        raise ValueError("empty corpus")
    torch.manual_seed(config.seed)
    if base is None:
        base = init_model(config.model_config(), seed=config.seed, dtype=config.torch_dtype)
    model = base
    history = init_history(base)
    policy = config.history_policy()
    state = OptimizerState.fresh(
        model, lr=config.lr, betas=(config.beta1, config.beta2), eps=config.eps, weight_decay=config.weight_decay
    )
    report = TrainReport(base=base)
    rng = np.random.default_rng(config.seed)

    fixed_masks = None
    if spec.kind == "tokencleaning_global":
        fixed_masks = {s.sample_id: m for s, (_, m) in zip(samples, score_pool(base, samples, spec))}

    if heldout:
        report.epochs.append({"epoch": 0, "heldout_nll": evaluate_nll(model, heldout)})
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(samples))
        for start in range(0, len(samples), config.batch_size):
            t0 = time.perf_counter()
            batch = [samples[i] for i in order[start : start + config.batch_size]]
            if fixed_masks is not None:
                masks = [fixed_masks[s.sample_id] for s in batch]
            else:
                masks = [m for _, m in score_batch(model, history, batch, spec, step)]
            keep = [(s, m) for s, m in zip(batch, masks) if m.k > 0]
            loss = None
            if keep:
                mb = MaskedBatch([s for s, _ in keep], [m for _, m in keep])
                loss, grads = value_and_grad(model, mb)
                model, state = optimizer_step(model, grads, state)
            step += 1
            history = maybe_update(policy, step, history, model)
            n_sel = sum(m.k for m in masks)
            report.steps.append({"step": step, "epoch": epoch, "loss": loss, "selected": n_sel,
                                 "tokens": sum(s.resp_len for s in batch)})
            report.step_seconds.append(time.perf_counter() - t0)
        if heldout:
            nll = evaluate_nll(model, heldout)
            report.epochs.append({"epoch": epoch, "heldout_nll": nll})
            logger.info("epoch %d heldout nll %.4f", epoch, nll)
    report.history = history
    return model, report
