import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from sstoken.checkpoint import load_checkpoint, read_header, save_checkpoint
from sstoken.corpus import TokenizedSample
from sstoken.errors import FormatError, ShapeError
from sstoken.model import (
    AttentionSlice,
    ModelConfig,
    attn_prompt_mass,
    batch_attn_scores,
    batch_logprobs,
    forward_logits,
    forward_logprobs,
    forward_with_capture,
    full_attention_forward,
    init_model,
    recompute_attention,
    zero_model,
)

from conftest import TINY, random_model, random_sample
from reference_forward import dense_forward, dense_response_logprobs


def test_config_validation():
    assert ModelConfig().attn_layer_index == 3
    with pytest.raises(ShapeError):
        ModelConfig(d_model=10, n_heads=3)
    with pytest.raises(ShapeError):
        ModelConfig(n_layers=2, attn_layer_index=2)


def test_zero_params_uniform(rng):
    m = zero_model(TINY)
    lp = forward_logprobs(m, random_sample(rng))
    assert torch.allclose(lp, torch.full_like(lp, -math.log(TINY.vocab_size)), atol=1e-12)


def test_logprobs_bounded(rng, tiny_model):
    for _ in range(20):
        s = random_sample(rng)
        lp = forward_logprobs(tiny_model, s)
        assert lp.shape == (s.resp_len,)
        assert torch.isfinite(lp).all() and (lp <= 0).all()


@pytest.mark.parametrize("seed", range(5))
def test_matches_dense_reference(seed):
    rng = np.random.default_rng(seed)
    m = random_model(seed)
    s = random_sample(rng)
    ours = forward_logprobs(m, s).numpy()
    ref = dense_response_logprobs(m.params, m.config, s)
    assert np.max(np.abs(ours - ref)) <= 1e-10


def test_capture_is_non_interfering(rng, tiny_model):
    s = random_sample(rng)
    lp_a = forward_logprobs(tiny_model, s)
    lp_b, cap = forward_with_capture(tiny_model, s)
    assert torch.equal(lp_a, lp_b)
    assert cap.shape == (s.total_len, TINY.d_model)


def test_capture_at_layer0_is_normalized_embedding(rng, tiny_model):
    m = tiny_model.with_config(attn_layer_index=0)
    s = random_sample(rng)
    _, cap = forward_with_capture(m, s)
    p = m.params
    ids = torch.tensor(s.ids)
    x = p["tok_emb"][ids] + p["pos_emb"][: s.total_len]
    expected = torch.nn.functional.layer_norm(x, (TINY.d_model,), p["blocks.0.ln1.w"], p["blocks.0.ln1.b"], 1e-5)
    assert torch.allclose(cap, expected, atol=1e-12)


def test_capture_memory_bound():
    cfg = ModelConfig(d_model=128, max_seq_len=256)
    m = init_model(cfg, seed=0)
    s = TokenizedSample(tuple(range(5, 261)), 10)
    _, cap = forward_with_capture(m, s)
    one_layer = s.total_len * cfg.d_model * cap.element_size()
    assert cap.numel() * cap.element_size() < 2 * one_layer


def test_recompute_zero_qk_uniform(rng, tiny_model):
    params = dict(tiny_model.params)
    for i in range(TINY.n_layers):
        params[f"blocks.{i}.attn.wq"] = torch.zeros_like(params[f"blocks.{i}.attn.wq"])
        params[f"blocks.{i}.attn.wk"] = torch.zeros_like(params[f"blocks.{i}.attn.wk"])
    m = tiny_model.replace(params)
    s = random_sample(rng)
    _, cap = forward_with_capture(m, s)
    w = recompute_attention(m, cap, s).weights
    T = s.total_len
    expected = torch.tril(torch.ones(T, T, dtype=torch.float64)) / torch.arange(1, T + 1, dtype=torch.float64)[:, None]
    assert torch.allclose(w, expected.expand_as(w), atol=1e-15)


def test_recompute_matches_full_forward_and_dense(rng):
    for seed in range(5):
        m = random_model(seed)
        s = random_sample(rng)
        _, cap = forward_with_capture(m, s)
        sl = recompute_attention(m, cap, s)
        full = full_attention_forward(m, s)[m.config.attn_layer_index]
        _, dense, _ = dense_forward(m.params, m.config, s.ids)
        assert torch.max(torch.abs(sl.weights - full)) <= 1e-6
        assert np.max(np.abs(sl.weights.numpy() - dense[m.config.attn_layer_index])) <= 1e-10
        T = s.total_len
        assert torch.all(sl.weights.masked_select(torch.ones(T, T, dtype=torch.bool).triu(1)) == 0)


def test_recompute_shape_error(rng, tiny_model):
    s = random_sample(rng)
    with pytest.raises(ShapeError):
        recompute_attention(tiny_model, torch.zeros(s.total_len + 1, TINY.d_model, dtype=torch.float64), s)


def test_attn_prompt_mass_uniform_rows():
    # uniform causal rows: response token at position 4 sees 3 prompt keys out of 5
    s = TokenizedSample((5, 6, 7, 8, 9), 3)
    T = 5
    w = torch.tril(torch.ones(T, T, dtype=torch.float64)) / torch.arange(1, T + 1, dtype=torch.float64)[:, None]
    scores = attn_prompt_mass(AttentionSlice(0, w[None]), s)
    assert scores.tolist() == pytest.approx([3 / 4, 3 / 5])


def test_attn_prompt_mass_head_average():
    s = TokenizedSample((5, 6, 7), 2)
    w = torch.zeros(2, 3, 3, dtype=torch.float64)
    w[0, 2] = torch.tensor([0.1, 0.1, 0.8])
    w[1, 2] = torch.tensor([0.5, 0.3, 0.2])
    assert float(attn_prompt_mass(AttentionSlice(0, w), s)[0]) == pytest.approx(0.5)


def test_attn_prompt_mass_errors():
    sl = AttentionSlice(0, torch.zeros(1, 4, 4))
    with pytest.raises(ShapeError):
        attn_prompt_mass(sl, TokenizedSample((5, 6, 7), 1))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_causality(seed):
    rng = np.random.default_rng(seed)
    m = random_model(seed % 7)
    s = random_sample(rng)
    p = int(rng.integers(0, s.total_len))
    ids = torch.tensor([s.ids])
    ids2 = ids.clone()
    ids2[0, p] = (ids2[0, p] - 5 + 1) % 256 + 5
    with torch.no_grad():
        a, _, _ = forward_logits(m, ids)
        b, _, _ = forward_logits(m, ids2)
    assert torch.equal(a[0, :p], b[0, :p])


def test_padding_does_not_change_scores(rng, tiny_model):
    samples = [random_sample(rng, sample_id=i) for i in range(6)]
    lps, caps = batch_logprobs(tiny_model, samples, capture=True)
    attn = batch_attn_scores(tiny_model, samples, caps)
    for s, lp, at in zip(samples, lps, attn):
        lp1, cap1 = forward_with_capture(tiny_model, s)
        at1 = attn_prompt_mass(recompute_attention(tiny_model, cap1, s), s)
        assert torch.allclose(lp, lp1, atol=1e-12)
        assert torch.allclose(at, at1, atol=1e-12)


def test_deterministic(rng, tiny_model):
    s = random_sample(rng)
    assert torch.equal(forward_logprobs(tiny_model, s), forward_logprobs(tiny_model, s))


def test_shape_error_on_long_sample(tiny_model):
    s = TokenizedSample(tuple([5] * 40), 3)
    with pytest.raises(ShapeError):
        forward_logprobs(tiny_model, s)


@pytest.mark.parametrize("dtype", [torch.float64, torch.float32])
def test_checkpoint_roundtrip(tmp_path, dtype):
    m = random_model(3, dtype=dtype).replace(version="step-7")
    path = tmp_path / "m.ckpt"
    save_checkpoint(m, path, role="history")
    loaded, role = load_checkpoint(path)
    assert role == "history" and loaded.version == "step-7" and loaded.config == m.config
    for k in m.params:
        assert torch.equal(loaded.params[k], m.params[k])
    hdr = read_header(path)
    assert hdr["byteorder"] == "little" and hdr["itemsize"] == (8 if dtype == torch.float64 else 4)
    save_checkpoint(loaded, tmp_path / "again.ckpt", role="history")
    assert path.read_bytes() == (tmp_path / "again.ckpt").read_bytes()


def test_checkpoint_rejects_bad_shapes(tmp_path):
    import json
    import struct

    m = random_model(1)
    path = tmp_path / "m.ckpt"
    save_checkpoint(m, path)
    raw = path.read_bytes()
    hlen = struct.unpack("<IQ", raw[8:20])[1]
    header = json.loads(raw[20 : 20 + hlen])
    header["arrays"][0]["shape"] = [1, 2]
    hb = json.dumps(header, sort_keys=True).encode()
    (tmp_path / "bad.ckpt").write_bytes(raw[:8] + struct.pack("<IQ", 1, len(hb)) + hb + raw[20 + hlen :])
    with pytest.raises(ShapeError):
        load_checkpoint(tmp_path / "bad.ckpt")
    (tmp_path / "junk.ckpt").write_bytes(b"hello world, not a checkpoint")
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "junk.ckpt")
