"""Small pre-norm decoder-only transformer, written functionally over a
dict of parameter tensors.

The main forward path uses ``scaled_dot_product_attention`` and never
materializes attention weights. Attention for one layer is obtained by
capturing the normalized hidden states entering that layer and recomputing
its query/key products (:func:`recompute_attention`).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Sequence

import torch
import torch.nn.functional as F

from .corpus import PAD, VOCAB_SIZE, TokenizedSample
from .errors import ShapeError

LN_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = VOCAB_SIZE
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 512
    max_seq_len: int = 256
    # None resolves to the deepest layer
    attn_layer_index: int | None = None

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ShapeError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.attn_layer_index is None:
            object.__setattr__(self, "attn_layer_index", self.n_layers - 1)
        if not 0 <= self.attn_layer_index < self.n_layers:
            raise ShapeError(f"attn_layer_index={self.attn_layer_index} outside [0, {self.n_layers})")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f = cfg.d_model, cfg.d_ff
    shapes: dict[str, tuple[int, ...]] = {
        "tok_emb": (cfg.vocab_size, d),
        "pos_emb": (cfg.max_seq_len, d),
    }
    for i in range(cfg.n_layers):
        p = f"blocks.{i}."
        shapes.update({
            p + "ln1.w": (d,), p + "ln1.b": (d,),
            p + "attn.wq": (d, d), p + "attn.wk": (d, d), p + "attn.wv": (d, d), p + "attn.wo": (d, d),
            p + "ln2.w": (d,), p + "ln2.b": (d,),
            p + "mlp.w1": (d, f), p + "mlp.b1": (f,), p + "mlp.w2": (f, d), p + "mlp.b2": (d,),
        })
    shapes.update({"ln_f.w": (d,), "ln_f.b": (d,), "head": (d, cfg.vocab_size)})
    return shapes


def param_class(name: str) -> str:
    """Coarse tensor class of a parameter name (embedding/attention/mlp/norm/head)."""
    if name.endswith("_emb"):
        return "embedding"
    if ".attn." in name:
        return "attention"
    if ".mlp." in name:
        return "mlp"
    if name == "head":
        return "head"
    return "norm"


@dataclass(frozen=True)
class ModelSnapshot:
    """Immutable parameter set. Never mutate ``params`` in place."""

    config: ModelConfig
    params: dict[str, torch.Tensor]
    version: str = "init"

    def __post_init__(self):
        expected = param_shapes(self.config)
        if set(expected) != set(self.params):
            missing = set(expected) - set(self.params)
            extra = set(self.params) - set(expected)
            raise ShapeError(f"parameter names mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, shape in expected.items():
            if tuple(self.params[name].shape) != shape:
                raise ShapeError(f"{name}: expected {shape}, got {tuple(self.params[name].shape)}")

    @property
    def dtype(self) -> torch.dtype:
        return self.params["tok_emb"].dtype

    def is_finite(self) -> bool:
        return all(bool(torch.isfinite(t).all()) for t in self.params.values())

    def replace(self, params: dict[str, torch.Tensor] | None = None, **kw) -> "ModelSnapshot":
        return dataclasses.replace(self, params=params if params is not None else self.params, **kw)

    def clone(self) -> "ModelSnapshot":
        return self.replace({k: v.detach().clone() for k, v in self.params.items()})

    def with_config(self, **changes) -> "ModelSnapshot":
        """Same parameters, different non-shape config (e.g. attention layer)."""
        return dataclasses.replace(self, config=dataclasses.replace(self.config, **changes))

    def to(self, dtype: torch.dtype) -> "ModelSnapshot":
        return self.replace({k: v.to(dtype) for k, v in self.params.items()})


def init_model(cfg: ModelConfig, seed: int = 0, dtype: torch.dtype = torch.float64, std: float = 0.02) -> ModelSnapshot:
    gen = torch.Generator().manual_seed(seed)
    resid_std = std / math.sqrt(2 * cfg.n_layers)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".w") and len(shape) == 1:
            t = torch.ones(shape, dtype=torch.float64)
        elif len(shape) == 1:
            t = torch.zeros(shape, dtype=torch.float64)
        else:
            s = resid_std if name.endswith(("attn.wo", "mlp.w2")) else std
            t = torch.randn(shape, generator=gen, dtype=torch.float64) * s
        params[name] = t.to(dtype)
    return ModelSnapshot(cfg, params)


def zero_model(cfg: ModelConfig, dtype: torch.dtype = torch.float64) -> ModelSnapshot:
    return ModelSnapshot(cfg, {n: torch.zeros(s, dtype=dtype) for n, s in param_shapes(cfg).items()})


# ---------------------------------------------------------------------------
# forward pass


def pad_batch(samples: Sequence[TokenizedSample]) -> torch.Tensor:
    """Right-pad token ids to the batch max length with PAD.

    Right padding keeps real queries from ever seeing a pad key under the
    causal mask, so padding does not move any attention mass.
    """
    T = max(s.total_len for s in samples)
    ids = torch.full((len(samples), T), PAD, dtype=torch.long)
    for b, s in enumerate(samples):
        ids[b, : s.total_len] = torch.tensor(s.ids, dtype=torch.long)
    return ids


def _layer_norm(x, w, b):
    return F.layer_norm(x, (x.shape[-1],), w, b, LN_EPS)


def _split_heads(x, n_heads):
    B, T, D = x.shape
    return x.view(B, T, n_heads, D // n_heads).transpose(1, 2)


def causal_attention_weights(q: torch.Tensor, k: torch.Tensor) -> torch.Tensor:
    """Explicit softmax((q k^T + M) / sqrt(d_k)) for (..., T, d_k) inputs."""
    T, dk = q.shape[-2], q.shape[-1]
    scores = q @ k.transpose(-2, -1) / math.sqrt(dk)
    future = torch.ones(T, T, dtype=torch.bool).triu(1)
    scores = scores.masked_fill(future, float("-inf"))
    return torch.softmax(scores, dim=-1)


def forward_logits(
    model: ModelSnapshot,
    ids: torch.Tensor,
    capture_layer: int | None = None,
    materialize_attention: bool = False,
):
    """Run the transformer on a (B, T) id batch.

    Returns ``(logits, captured, attentions)``: ``captured`` is the
    post-ln1 hidden state entering block ``capture_layer`` (or None);
    ``attentions`` is a per-layer list of (B, H, T, T) weights when
    ``materialize_attention`` is set, else None.
    """
    cfg, p = model.config, model.params
    if ids.dim() != 2:
        raise ShapeError(f"ids must be (B, T), got {tuple(ids.shape)}")
    B, T = ids.shape
    if T > cfg.max_seq_len:
        raise ShapeError(f"sequence length {T} exceeds max_seq_len={cfg.max_seq_len}")
    if int(ids.max()) >= cfg.vocab_size or int(ids.min()) < 0:
        raise ShapeError("token id outside [0, vocab_size)")

    x = p["tok_emb"][ids] + p["pos_emb"][:T]
    captured = None
    attentions = [] if materialize_attention else None
    for i in range(cfg.n_layers):
        pre = f"blocks.{i}."
        h = _layer_norm(x, p[pre + "ln1.w"], p[pre + "ln1.b"])
        if i == capture_layer:
            captured = h
        q = _split_heads(h @ p[pre + "attn.wq"], cfg.n_heads)
        k = _split_heads(h @ p[pre + "attn.wk"], cfg.n_heads)
        v = _split_heads(h @ p[pre + "attn.wv"], cfg.n_heads)
        if materialize_attention:
            a = causal_attention_weights(q, k)
            attentions.append(a)
            ctx = a @ v
        else:
            ctx = F.scaled_dot_product_attention(q, k, v, is_causal=True)
        ctx = ctx.transpose(1, 2).reshape(B, T, cfg.d_model)
        x = x + ctx @ p[pre + "attn.wo"]
        h = _layer_norm(x, p[pre + "ln2.w"], p[pre + "ln2.b"])
        h = F.gelu(h @ p[pre + "mlp.w1"] + p[pre + "mlp.b1"], approximate="tanh")
        x = x + h @ p[pre + "mlp.w2"] + p[pre + "mlp.b2"]
    x = _layer_norm(x, p["ln_f.w"], p["ln_f.b"])
    return x @ p["head"], captured, attentions


def token_logprobs_from_logits(logits: torch.Tensor, ids: torch.Tensor) -> torch.Tensor:
    """(B, T) log P(x_i | x_<i) for i >= 1; column 0 is 0 (unpredicted)."""
    lp = torch.log_softmax(logits[:, :-1], dim=-1).gather(-1, ids[:, 1:, None]).squeeze(-1)
    return F.pad(lp, (1, 0))


def _check_fits(model: ModelSnapshot, sample: TokenizedSample):
    if sample.total_len > model.config.max_seq_len:
        raise ShapeError(f"sample length {sample.total_len} exceeds max_seq_len={model.config.max_seq_len}")


def batch_logprobs(model: ModelSnapshot, samples: Sequence[TokenizedSample], capture: bool = False):
    """Per-sample response log-probs for a padded batch (no grad).

    Returns a list of 1-D tensors, plus per-sample captured states of shape
    (L_seq, d_model) when ``capture`` is set.
    """
    for s in samples:
        _check_fits(model, s)
    ids = pad_batch(samples)
    layer = model.config.attn_layer_index if capture else None
    with torch.no_grad():
        logits, captured, _ = forward_logits(model, ids, capture_layer=layer)
        lp = token_logprobs_from_logits(logits, ids)
    out = [lp[b, s.prompt_len : s.total_len] for b, s in enumerate(samples)]
    if not capture:
        return out
    return out, [captured[b, : s.total_len] for b, s in enumerate(samples)]


def forward_logprobs(model: ModelSnapshot, sample: TokenizedSample) -> torch.Tensor:
    """log P(x_i | x_<i) in nats for every response position, length L_resp."""
    return batch_logprobs(model, [sample])[0]


def forward_with_capture(model: ModelSnapshot, sample: TokenizedSample):
    """Like :func:`forward_logprobs`, also returning the (L_seq, d_model)
    normalized hidden states entering the configured attention layer."""
    lps, caps = batch_logprobs(model, [sample], capture=True)
    return lps[0], caps[0]


@dataclass(frozen=True)
class AttentionSlice:
    layer: int
    # (H, L_seq, L_seq); rows are queries, columns keys
    weights: torch.Tensor = field(repr=False)

    @property
    def n_heads(self) -> int:
        return self.weights.shape[0]


def recompute_attention(model: ModelSnapshot, captured: torch.Tensor, sample: TokenizedSample) -> AttentionSlice:
    """Rebuild the attention weights of the configured layer from its captured input."""
    cfg = model.config
    layer = cfg.attn_layer_index
    if captured.shape != (sample.total_len, cfg.d_model):
        raise ShapeError(f"captured states {tuple(captured.shape)} != ({sample.total_len}, {cfg.d_model})")
    pre = f"blocks.{layer}."
    with torch.no_grad():
        q = _split_heads((captured @ model.params[pre + "attn.wq"])[None], cfg.n_heads)[0]
        k = _split_heads((captured @ model.params[pre + "attn.wk"])[None], cfg.n_heads)[0]
        return AttentionSlice(layer, causal_attention_weights(q, k))


def full_attention_forward(model: ModelSnapshot, sample: TokenizedSample) -> list[torch.Tensor]:
    """Every layer's (H, T, T) attention from a weight-materializing forward."""
    _check_fits(model, sample)
    ids = torch.tensor([sample.ids], dtype=torch.long)
    with torch.no_grad():
        _, _, attn = forward_logits(model, ids, materialize_attention=True)
    return [a[0] for a in attn]


def attn_prompt_mass(attn: AttentionSlice, sample: TokenizedSample) -> torch.Tensor:
    """Head-averaged attention mass each response token puts on the prompt."""
    if sample.prompt_len >= sample.total_len:
        raise IndexError("sample has no response tokens")
    w = attn.weights
    if w.shape[-1] != sample.total_len:
        raise ShapeError(f"attention covers {w.shape[-1]} positions, sample has {sample.total_len}")
    P = sample.prompt_len
    per_head = w[:, P:, :P].sum(dim=-1)
    return per_head.mean(dim=0).clamp(0.0, 1.0)


def batch_attn_scores(model: ModelSnapshot, samples: Sequence[TokenizedSample], captured: Sequence[torch.Tensor]):
    return [attn_prompt_mass(recompute_attention(model, c, s), s) for s, c in zip(samples, captured)]
