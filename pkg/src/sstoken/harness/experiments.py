"""Desk-scale experiments on the synthetic noisy corpus."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

from ..corpus import load_corpus
from ..model import init_model
from ..selection import SelectorSpec
from ..training import RunConfig, train
from .metrics import selection_noise_rates
from .synthetic import gen_synthetic_corpus, read_noise_sidecar


@dataclass(frozen=True)
class NoiseRejectionResult:
    seed: int
    sstoken_rate: float
    random_rate: float
    seconds: float

    @property
    def gap(self) -> float:
        return self.random_rate - self.sstoken_rate


def noise_rejection(
    work_dir: str | Path,
    seed: int,
    n_samples: int = 2000,
    noise_rate: float = 0.3,
    gamma: float = 0.5,
    rho: float = 0.6,
    config: RunConfig | None = None,
) -> NoiseRejectionResult:
    """Train one full-data epoch, then score the training pool against the frozen base."""
    t0 = time.perf_counter()
    paths = gen_synthetic_corpus(Path(work_dir) / f"corpus-{seed}", n_samples, noise_rate, seed)
    cfg = (config or RunConfig()).replace(selector="full", epochs=1, seed=seed)
    corpus = load_corpus(paths.train, seed=seed)
    base = init_model(cfg.model_config(), seed=seed, dtype=cfg.torch_dtype)
    final, _ = train(corpus, cfg.selector_spec(), cfg, base=base)
    spec = SelectorSpec(kind="sstoken", gamma=gamma, rho=rho, seed=seed)
    ss, rnd = selection_noise_rates(final, base, corpus.samples, read_noise_sidecar(paths.noise), spec, random_seed=seed)
    return NoiseRejectionResult(seed, ss, rnd, time.perf_counter() - t0)


@dataclass
class QualityResult:
    seed: int
    heldout_nll: dict[str, float] = field(default_factory=dict)
    steps: dict[str, int] = field(default_factory=dict)
    seconds: float = 0.0


# Small model with a larger step size so that a few minutes of CPU reach
# the regime where the model fits the task rather than the byte unigram.
QUALITY_CONFIG = RunConfig(d_model=64, n_layers=2, n_heads=4, d_ff=256, lr=3e-3, epochs=30, batch_size=16)


def quality_comparison(
    work_dir: str | Path,
    seed: int,
    selectors: tuple[str, ...] = ("full", "sstoken"),
    n_samples: int = 2000,
    noise_rate: float = 0.3,
    config: RunConfig | None = None,
) -> QualityResult:
    """Held-out NLL per selector, all arms sharing the base model and step budget."""
    t0 = time.perf_counter()
    paths = gen_synthetic_corpus(Path(work_dir) / f"corpus-{seed}", n_samples, noise_rate, seed)
    cfg = (config or QUALITY_CONFIG).replace(seed=seed)
    corpus = load_corpus(paths.train, seed=seed)
    heldout = load_corpus(paths.heldout, seed=seed, split="heldout").samples
    base = init_model(cfg.model_config(), seed=seed, dtype=cfg.torch_dtype)
    out = QualityResult(seed)
    for kind in selectors:
        arm = cfg.replace(selector=kind)
        _, report = train(corpus, arm.selector_spec(), arm, heldout=heldout, base=base)
        out.heldout_nll[kind] = report.final_heldout_nll
        out.steps[kind] = len(report.steps)
    out.seconds = time.perf_counter() - t0
    return out
