import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from sstoken.errors import DomainError, ShapeError
from sstoken.history import HistoryCache, HistoryPolicy, ema_update, init_history, maybe_update
from sstoken.model import ModelConfig, forward_logprobs, zero_model
from sstoken.selection import SelectorSpec, score_sample

from conftest import TINY, random_model, random_sample


def _bitwise_equal(a, b):
    return all(torch.equal(a.params[k], b.params[k]) for k in a.params)


def test_init_history_is_a_copy():
    base = random_model(0)
    his = init_history(base)
    assert _bitwise_equal(his, base)
    assert all(his.params[k].data_ptr() != base.params[k].data_ptr() for k in base.params)


def test_init_history_rel_zero(rng):
    base = random_model(1)
    his = init_history(base)
    sc, _ = score_sample(base, his, random_sample(rng), SelectorSpec())
    assert np.all(sc.rel == 0)


def test_ema_endpoints():
    h, c = random_model(0), random_model(1)
    assert _bitwise_equal(ema_update(h, c, 1.0), h)
    assert _bitwise_equal(ema_update(h, c, 0.0), c)


def test_ema_scalar_toy():
    h = zero_model(TINY)
    c = zero_model(TINY)
    h = h.replace({**h.params, "head": torch.ones_like(h.params["head"])})
    out = ema_update(h, c, 0.9)
    assert float(out.params["head"][0, 0]) == pytest.approx(0.9, abs=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 1.0), st.integers(0, 50))
def test_ema_contraction_and_fixed_point(alpha, seed):
    h, c = random_model(seed), random_model(seed + 1)
    e = ema_update(h, c, alpha)
    for k in h.params:
        lhs = torch.linalg.vector_norm(e.params[k] - c.params[k])
        rhs = alpha * torch.linalg.vector_norm(h.params[k] - c.params[k])
        assert abs(float(lhs - rhs)) <= 1e-12
    same = ema_update(h, h, alpha)
    for k in h.params:
        assert torch.allclose(same.params[k], h.params[k], atol=1e-15, rtol=0)


def test_ema_errors():
    a = random_model(0)
    b = random_model(0, cfg=ModelConfig(d_model=8, n_layers=2, n_heads=2, d_ff=16, max_seq_len=32))
    with pytest.raises(ShapeError):
        ema_update(a, b, 0.5)
    with pytest.raises(DomainError):
        ema_update(a, a, 1.5)


def test_policy_validation():
    with pytest.raises(DomainError):
        HistoryPolicy(mode="bogus")
    with pytest.raises(DomainError):
        HistoryPolicy(alpha=2.0)
    with pytest.raises(DomainError):
        HistoryPolicy(update_every=0)


def test_maybe_update_schedule():
    h, c = random_model(0), random_model(1)
    frozen = HistoryPolicy("frozen_base")
    for t in (1, 10, 50, 100):
        assert maybe_update(frozen, t, h, c) is h
    ema = HistoryPolicy("ema", alpha=0.5, update_every=10)
    assert maybe_update(ema, 7, h, c) is h
    updated = maybe_update(ema, 10, h, c)
    assert _bitwise_equal(updated, ema_update(h, c, 0.5))


def test_history_cache_consistency(rng):
    his = random_model(2)
    cache = HistoryCache(his, HistoryPolicy())
    samples = [random_sample(rng, sample_id=i) for i in range(5)]
    first = [cache.logprobs(s) for s in samples]
    again = [cache.logprobs(s) for s in samples]
    assert len(cache) == 5
    for s, a, b in zip(samples, first, again):
        assert a is b
        assert torch.equal(a, forward_logprobs(his, s))
    with pytest.raises(DomainError):
        HistoryCache(his, HistoryPolicy("ema"))
