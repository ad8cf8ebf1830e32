import numpy as np
import pytest
import torch

from sstoken.corpus import N_SPECIAL, TokenizedSample
from sstoken.model import ModelConfig, init_model

torch.use_deterministic_algorithms(True)

TINY = ModelConfig(d_model=16, n_layers=2, n_heads=2, d_ff=32, max_seq_len=32)


def random_sample(rng: np.random.Generator, max_len: int = 24, vocab: int = 261, sample_id: int = 0) -> TokenizedSample:
    total = int(rng.integers(3, max_len + 1))
    prompt_len = int(rng.integers(1, total))
    ids = rng.integers(N_SPECIAL, vocab, size=total)
    return TokenizedSample(tuple(int(i) for i in ids), prompt_len, sample_id)


def random_model(seed: int, cfg: ModelConfig = TINY, std: float = 0.3, dtype=torch.float64):
    """Init with a large std and perturbed norms so attention is far from uniform."""
    m = init_model(cfg, seed=seed, dtype=dtype, std=std)
    gen = torch.Generator().manual_seed(seed + 10_000)
    params = {}
    for name, t in m.params.items():
        if t.dim() == 1:
            t = t + 0.2 * torch.randn(t.shape, generator=gen, dtype=torch.float64).to(dtype)
        params[name] = t
    return m.replace(params)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model():
    return random_model(0)


_CRITERIA: list[tuple[int, str, bool, str]] = []


@pytest.fixture
def criterion():
    """Record an acceptance criterion outcome for the end-of-run summary."""

    def record(number: int, name: str, passed: bool, detail: str = ""):
        _CRITERIA.append((number, name, bool(passed), detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(_CRITERIA):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {number:>2}. {name}  {detail}")
