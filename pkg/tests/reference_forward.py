"""Straightforward NumPy forward used as an oracle for the torch model."""

import math

import numpy as np


def _ln(x, w, b, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * w + b


def _gelu_tanh(x):
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))


def dense_forward(params, cfg, ids):
    """Returns (logits (T, V), per-layer attention (H, T, T), per-layer ln1 outputs)."""
    p = {k: v.detach().numpy().astype(np.float64) for k, v in params.items()}
    T = len(ids)
    H, dk = cfg.n_heads, cfg.d_model // cfg.n_heads
    x = p["tok_emb"][list(ids)] + p["pos_emb"][:T]
    attns, hiddens = [], []
    for i in range(cfg.n_layers):
        pre = f"blocks.{i}."
        h = _ln(x, p[pre + "ln1.w"], p[pre + "ln1.b"])
        hiddens.append(h)
        q, k, v = (h @ p[pre + f"attn.w{c}"] for c in "qkv")
        A = np.zeros((H, T, T))
        ctx = np.zeros((T, cfg.d_model))
        for hd in range(H):
            sl = slice(hd * dk, (hd + 1) * dk)
            for a in range(T):
                logits = np.array([q[a, sl] @ k[b, sl] / math.sqrt(dk) for b in range(a + 1)])
                e = np.exp(logits - logits.max())
                A[hd, a, : a + 1] = e / e.sum()
            ctx[:, sl] = A[hd] @ v[:, sl]
        attns.append(A)
        x = x + ctx @ p[pre + "attn.wo"]
        h = _ln(x, p[pre + "ln2.w"], p[pre + "ln2.b"])
        x = x + _gelu_tanh(h @ p[pre + "mlp.w1"] + p[pre + "mlp.b1"]) @ p[pre + "mlp.w2"] + p[pre + "mlp.b2"]
    x = _ln(x, p["ln_f.w"], p["ln_f.b"])
    return x @ p["head"], attns, hiddens


def dense_response_logprobs(params, cfg, sample):
    logits, _, _ = dense_forward(params, cfg, sample.ids)
    out = []
    for i in range(sample.prompt_len, sample.total_len):
        row = logits[i - 1]
        m = row.max()
        out.append(row[sample.ids[i]] - m - math.log(np.exp(row - m).sum()))
    return np.array(out)
