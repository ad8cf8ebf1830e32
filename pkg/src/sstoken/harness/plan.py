"""Experiment plans: grids of runs, per-run execution, metrics files, summaries.

Every run owns ``<plan_out>/runs/<run_id>/``. A run whose ``metrics.json``
already exists is not re-executed, so re-running a plan is a no-op and
leaves the merged metrics files byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
import traceback
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from ..checkpoint import load_checkpoint, save_checkpoint
from ..corpus import load_corpus
from ..errors import EmptyInput
from ..model import ModelSnapshot, init_model
from ..selection import SelectorSpec, export_masks, mask_record
from ..training import RunConfig, evaluate_nll, train
from .metrics import mask_overlap, noise_selection_rate, score_samples
from .synthetic import read_noise_sidecar

logger = logging.getLogger(__name__)

GAMMA_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)
RHO_GRID = (0.2, 0.4, 0.6, 0.8)
EVAL_SAMPLES = 256


def run_id(cfg: RunConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    digest = hashlib.sha1(blob).hexdigest()[:8]
    layer = "d" if cfg.layer is None else cfg.layer
    return f"{cfg.selector}-g{cfg.gamma:g}-r{cfg.rho:g}-l{layer}-s{cfg.seed}-{digest}"


@dataclass
class MetricsRow:
    run_id: str
    selector: str
    gamma: float
    rho: float
    layer: int
    seed: int
    heldout_nll: float
    noise_rate: float
    random_noise_rate: float
    overlap_gamma1: float
    overlap_gamma0: float
    # excluded from metrics files so they stay reproducible; see timing.csv
    wall_clock_s: float = field(default=0.0, compare=False)

    def record(self) -> dict:
        d = asdict(self)
        d.pop("wall_clock_s")
        return d


METRIC_FIELDS = [f.name for f in fields(MetricsRow) if f.name != "wall_clock_s"]


@dataclass
class ExperimentPlan:
    runs: list[RunConfig]
    out_dir: Path

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        if not self.runs:
            raise EmptyInput("plan has no runs")
        ids = [run_id(c) for c in self.runs]
        if len(set(ids)) != len(ids):
            raise ValueError("plan contains duplicate runs (seeds must be distinct per grid point)")


def grid_plan(base: RunConfig, out_dir: str | Path, seeds: Sequence[int], **axes: Sequence) -> ExperimentPlan:
    """Cartesian product over ``axes`` (RunConfig field -> values) and seeds."""
    if not seeds or len(set(seeds)) != len(seeds):
        raise ValueError("seeds must be non-empty and distinct")
    for name, values in axes.items():
        if not values:
            raise ValueError(f"axis {name!r} is empty")
    runs = []
    names = list(axes)
    for combo in _product([list(axes[n]) for n in names]):
        for s in seeds:
            runs.append(base.replace(seed=s, **dict(zip(names, combo))))
    return ExperimentPlan(runs, Path(out_dir))


def _product(lists):
    if not lists:
        yield ()
        return
    for head in lists[0]:
        for rest in _product(lists[1:]):
            yield (head, *rest)


def gamma_sweep(base: RunConfig, out_dir, seeds=(0,), gammas=GAMMA_GRID) -> ExperimentPlan:
    return grid_plan(base.replace(selector="sstoken"), out_dir, seeds, gamma=gammas)


def rho_sweep(base: RunConfig, out_dir, seeds=(0, 1, 2), rhos=RHO_GRID) -> ExperimentPlan:
    return grid_plan(base, out_dir, seeds, rho=rhos)


# ---------------------------------------------------------------------------
# single run


def _load_reference(cfg: RunConfig, base: ModelSnapshot, run_dir: Path) -> ModelSnapshot | None:
    """Reference model for EL selectors: a checkpoint, or trained here on a JSONL corpus."""
    if cfg.selector not in ("rho1", "tokencleaning_global"):
        return None
    if not cfg.reference_path:
        raise ValueError(f"selector {cfg.selector!r} needs reference_path")
    if not cfg.reference_path.endswith(".jsonl"):
        return load_checkpoint(cfg.reference_path)[0]
    cached = run_dir / "reference.ckpt"
    if cached.exists():
        return load_checkpoint(cached)[0]
    ref_corpus = load_corpus(cfg.reference_path, seed=cfg.seed, split="reference")
    ref_cfg = cfg.replace(selector="full")
    ref, _ = train(ref_corpus, ref_cfg.selector_spec(), ref_cfg, base=base)
    save_checkpoint(ref, cached, role="reference")
    return ref


def execute_run(cfg: RunConfig, run_dir: str | Path) -> MetricsRow:
    """Train one configuration and write its artifacts into ``run_dir``."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    done = run_dir / "metrics.json"
    if done.exists():
        rec = json.loads(done.read_text())
        return MetricsRow(**rec)
    t0 = time.perf_counter()
    cfg.to_file(run_dir / "config.json")
    train_corpus = load_corpus(cfg.train_path, seed=cfg.seed)
    heldout = load_corpus(cfg.heldout_path, seed=cfg.seed, split="heldout") if cfg.heldout_path else None
    if cfg.init_checkpoint:
        base = load_checkpoint(cfg.init_checkpoint)[0]
    else:
        base = init_model(cfg.model_config(), seed=cfg.seed, dtype=cfg.torch_dtype)
    reference = _load_reference(cfg, base, run_dir)
    spec = cfg.selector_spec(reference)
    final, report = train(train_corpus, spec, cfg, heldout=heldout.samples if heldout else None, base=base)
    save_checkpoint(final, run_dir / "final.ckpt")
    save_checkpoint(report.history, run_dir / "history.ckpt", role="history")
    report.write(run_dir / "report.jsonl")

    # post-training selection analysis on a fixed prefix of the training pool
    history = report.history
    samples = train_corpus.samples[:EVAL_SAMPLES]
    scored = score_samples(final, history, samples, spec)
    masks = [m for _, m in scored]
    export_masks(run_dir / "masks.jsonl", (mask_record(s.sample_id, sc, m, cfg.gamma) for s, (sc, m) in zip(samples, scored)))
    ss = SelectorSpec(kind="sstoken", gamma=cfg.gamma, rho=cfg.rho, layer=cfg.layer)
    m1 = [m for _, m in score_samples(final, history, samples, ss.replace(gamma=1.0))]
    m0 = [m for _, m in score_samples(final, history, samples, ss.replace(gamma=0.0))]
    noise_rate = rnd_rate = float("nan")
    if cfg.noise_path:
        noise = read_noise_sidecar(cfg.noise_path)
        rnd = [m for _, m in score_samples(final, history, samples, SelectorSpec(kind="random", rho=cfg.rho, seed=cfg.seed))]
        noise_rate = noise_selection_rate(samples, masks, noise)
        rnd_rate = noise_selection_rate(samples, rnd, noise)
    nll = report.final_heldout_nll if heldout else evaluate_nll(final, samples)
    row = MetricsRow(
        run_id=run_dir.name, selector=cfg.selector, gamma=cfg.gamma, rho=cfg.rho,
        layer=final.config.attn_layer_index if cfg.layer is None else cfg.layer, seed=cfg.seed,
        heldout_nll=nll, noise_rate=noise_rate, random_noise_rate=rnd_rate,
        overlap_gamma1=mask_overlap(masks, m1), overlap_gamma0=mask_overlap(masks, m0),
        wall_clock_s=time.perf_counter() - t0,
    )
    (run_dir / "timing.json").write_text(json.dumps({"wall_clock_s": row.wall_clock_s, "step_seconds": report.step_seconds}))
    done.write_text(json.dumps(row.record(), sort_keys=True) + "\n")
    return row


def _row_from_dir(run_dir: Path) -> MetricsRow:
    row = MetricsRow(**json.loads((run_dir / "metrics.json").read_text()))
    timing = run_dir / "timing.json"
    if timing.exists():
        row.wall_clock_s = json.loads(timing.read_text())["wall_clock_s"]
    return row


def run_plan(plan: ExperimentPlan) -> list[MetricsRow]:
    """Execute every run (skipping completed ones), then merge metrics files.

    A failing run is logged to ``failures.jsonl`` and the plan moves on.
    """
    out = plan.out_dir
    (out / "runs").mkdir(parents=True, exist_ok=True)
    rows, failures = [], []
    for cfg in plan.runs:
        rid = run_id(cfg)
        run_dir = out / "runs" / rid
        try:
            execute_run(cfg, run_dir)
            rows.append(_row_from_dir(run_dir))
        except Exception as exc:  # isolate per-run failures
            logger.error("run %s failed: %s", rid, exc)
            failures.append({"run_id": rid, "error": repr(exc), "traceback": traceback.format_exc()})
    write_metrics(rows, out)
    fail_path = out / "failures.jsonl"
    if failures:
        with fail_path.open("w") as fh:
            for f in failures:
                fh.write(json.dumps(f, sort_keys=True) + "\n")
    elif fail_path.exists():
        fail_path.unlink()
    return rows


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return v


def write_metrics(rows: Sequence[MetricsRow], out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    with (out_dir / "metrics.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.record().items()})
    with (out_dir / "metrics.jsonl").open("w") as fh:
        for r in rows:
            fh.write(json.dumps(r.record(), sort_keys=True) + "\n")
    with (out_dir / "timing.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run_id", "wall_clock_s"])
        for r in rows:
            w.writerow([r.run_id, r.wall_clock_s])


def read_metrics(path: str | Path) -> list[MetricsRow]:
    with Path(path).open() as fh:
        return [MetricsRow(**json.loads(line)) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# summaries

SUMMARY_METRICS = ("heldout_nll", "noise_rate", "random_noise_rate", "overlap_gamma1", "overlap_gamma0")


def summarize(rows: Sequence[MetricsRow]) -> list[dict]:
    """Mean and population stddev across seeds, per (selector, gamma, rho, layer)."""
    if not rows:
        raise EmptyInput("no metrics rows to summarize")
    groups: dict[tuple, list[MetricsRow]] = {}
    for r in rows:
        groups.setdefault((r.selector, r.gamma, r.rho, r.layer), []).append(r)
    out = []
    for key in sorted(groups):
        members = groups[key]
        rec = dict(zip(("selector", "gamma", "rho", "layer"), key), n_seeds=len(members))
        for m in SUMMARY_METRICS:
            vals = np.array([getattr(r, m) for r in members], dtype=float)
            rec[f"{m}_mean"] = float(vals.mean())
            rec[f"{m}_std"] = float(vals.std(ddof=0))
        out.append(rec)
    return out


def write_summary(summary: Sequence[dict], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write("# mean and population stddev (ddof=0) across seeds\n")
        w = csv.DictWriter(fh, fieldnames=list(summary[0]), lineterminator="\n")
        w.writeheader()
        for rec in summary:
            w.writerow({k: _fmt(v) for k, v in rec.items()})


def format_summary(summary: Sequence[dict]) -> str:
    lines = [f"{'selector':<22}{'gamma':>6}{'rho':>6}{'layer':>6}{'n':>4}  heldout NLL         noise rate"]
    for r in summary:
        lines.append(
            f"{r['selector']:<22}{r['gamma']:>6g}{r['rho']:>6g}{r['layer']:>6}{r['n_seeds']:>4}  "
            f"{r['heldout_nll_mean']:.4f} ± {r['heldout_nll_std']:.4f}   "
            f"{r['noise_rate_mean']:.3f} ± {r['noise_rate_std']:.3f}"
        )
    return "\n".join(lines)
