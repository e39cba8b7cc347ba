"""Training loop, leave-one-domain-out protocol, ablation driver, reports.

Everything is deterministic in (config, seed): the dataset, parameter
initialization, batch order, final parameters, and emitted report bytes.
Fold f trains with seed ``config.seed + f``; the frozen encoder stacks are
seeded by ``config.seed`` alone so they are identical across folds.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import platform
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, data, metrics
from .autodiff import Tape
from .config import RunConfig
from .data import DatasetSpec, SyntheticSample
from .errors import ConfigError, ContractError, NumericalError
from .metrics import CSV_HEADER, FoldReport, ScoreSet
from .model import Model
from .optim import Adam
from .seeding import derive_rng

log = logging.getLogger(__name__)

COMPONENT_CELLS = (
    ("caption_only", dict(caption_prompt=True, query_prompt=False, crossmodal_gate=False)),
    ("query_only", dict(caption_prompt=False, query_prompt=True, crossmodal_gate=False)),
    ("both_prompts", dict(caption_prompt=True, query_prompt=True, crossmodal_gate=False)),
    ("full", dict(caption_prompt=True, query_prompt=True, crossmodal_gate=True)),
)
QFORMER_QUERY_GRID = (8, 16, 32, 64)
QFORMER_DEPTH_GRID = (1, 2, 4, 8)
ABLATION_AXES = ("components", "fusion", "qformer-grid")


@dataclass
class FoldResult:
    report: FoldReport
    trace: list[tuple[float, float, float]]
    live_scores: np.ndarray
    spoof_scores: np.ndarray


@dataclass
class RunResult:
    config: RunConfig
    digest: str
    folds: list[FoldResult]
    average: FoldReport

    def reports(self) -> list[FoldReport]:
        return [f.report for f in self.folds if f.report.valid] + [self.average]


@dataclass
class AblationCell:
    label: str
    extra: dict
    folds: list[FoldReport]
    average: FoldReport


def prepare_samples(cfg: RunConfig) -> list[SyntheticSample]:
    samples = data.generate_dataset(cfg.dataset)
    if cfg.caption_file:
        samples = data.apply_caption_overrides(samples, data.load_captions(cfg.caption_file))
    return samples


def train(model: Model, cfg: RunConfig, raw: np.ndarray, labels: np.ndarray,
          caption_feats: np.ndarray | None, train_idx: np.ndarray,
          batch_rng: np.random.Generator) -> list[tuple[float, float, float]]:
    """Step loop: sample a batch with replacement from the source pool, run
    the forward pass, backprop, Adam-update the trainable groups. Aborts on a
    non-finite loss naming the offending term."""
    opt = Adam(model.trainable_parameters(), lr=cfg.optim.lr, beta1=cfg.optim.beta1,
               beta2=cfg.optim.beta2, eps=cfg.optim.eps)
    trace: list[tuple[float, float, float]] = []
    for step in range(cfg.steps):
        rows = train_idx[batch_rng.integers(0, train_idx.size, size=cfg.batch_size)]
        caps = caption_feats[rows] if caption_feats is not None else None
        with Tape() as tape:
            try:
                result = model.forward(raw[rows], caps, labels[rows])
            except NumericalError as exc:
                raise NumericalError(f"step {step}: {exc}") from exc
            tape.backward(result.loss)
        opt.step()
        opt.zero_grad()
        trace.append((
            result.loss.item(),
            result.loss_cls.item(),
            result.loss_align.item() if result.loss_align is not None else 0.0,
        ))
    return trace


def evaluate_scores(model: Model, raw: np.ndarray,
                    caption_feats: np.ndarray | None, idx: np.ndarray,
                    chunk: int = 256) -> np.ndarray:
    """Live-class probability per sample, computed off-tape in chunks."""
    scores = np.empty(idx.size)
    for start in range(0, idx.size, chunk):
        rows = idx[start:start + chunk]
        caps = caption_feats[rows] if caption_feats is not None else None
        scores[start:start + rows.size] = model.forward(raw[rows], caps).live_scores()
    return scores


def run_fold(cfg: RunConfig, samples: list[SyntheticSample], fold_index: int,
             holdout: str, caption_feats: np.ndarray | None = None,
             model: Model | None = None) -> FoldResult:
    """Train on every domain except ``holdout`` and score the held-out one."""
    if holdout not in cfg.dataset.domains:
        raise ConfigError(f"holdout domain {holdout!r} not in {cfg.dataset.domains}")
    raw = np.stack([s.raw for s in samples])
    labels = np.array([s.label for s in samples], dtype=np.int64)
    domains = np.array([s.domain for s in samples])
    if model is None:
        model = build_model(cfg, fold_index)
    if model.components.caption_prompt and caption_feats is None:
        caption_feats = model.encode_captions(
            data.tokenize_all(samples, cfg.model.context_len, cfg.model.vocab))

    train_idx = np.flatnonzero(domains != holdout)
    eval_idx = np.flatnonzero(domains == holdout)
    if train_idx.size == 0 or eval_idx.size == 0:
        raise ConfigError(f"holdout {holdout!r} leaves an empty split")

    batch_rng = derive_rng(cfg.seed + fold_index, "batches")
    trace = train(model, cfg, raw, labels, caption_feats, train_idx, batch_rng)

    scores = evaluate_scores(model, raw, caption_feats, eval_idx)
    eval_labels = labels[eval_idx]
    live = scores[eval_labels == data.LABEL_LIVE]
    spoof = scores[eval_labels == data.LABEL_SPOOF]
    if live.size == 0 or spoof.size == 0:
        log.warning("fold %d (holdout %s) has a single class; marking invalid",
                    fold_index, holdout)
        nan = float("nan")
        report = FoldReport(fold_index, holdout, nan, nan, nan, nan, nan, nan,
                            cfg.seed, cfg.steps, valid=False)
        return FoldResult(report, trace, live, spoof)
    report = metrics.score_fold(
        fold_index, holdout, ScoreSet(live, spoof), cfg.seed, cfg.steps,
        cfg.threshold_policy, cfg.fixed_threshold,
    )
    return FoldResult(report, trace, live, spoof)


def build_model(cfg: RunConfig, fold_index: int) -> Model:
    return Model.build(cfg.model, dataclasses.replace(cfg.components),
                       cfg.fusion_variant, cfg.dataset.raw_dim,
                       frozen_seed=cfg.seed, train_seed=cfg.seed + fold_index)


def run_loo(cfg: RunConfig) -> RunResult:
    """One fold per domain, then the arithmetic-mean row over valid folds."""
    cfg.validate()
    samples = prepare_samples(cfg)
    caption_feats = None
    folds: list[FoldResult] = []
    for fold_index, holdout in enumerate(cfg.dataset.domains):
        model = build_model(cfg, fold_index)
        if model.components.caption_prompt and caption_feats is None:
            # Frozen caption path is fold-independent; encode once per run.
            caption_feats = model.encode_captions(
                data.tokenize_all(samples, cfg.model.context_len, cfg.model.vocab))
        log.info("fold %d: holdout=%s steps=%d", fold_index, holdout, cfg.steps)
        folds.append(run_fold(cfg, samples, fold_index, holdout, caption_feats, model))
    average = metrics.average_report([f.report for f in folds])
    return RunResult(cfg, cfg.digest(), folds, average)


def run_ablation(cfg: RunConfig, axis: str) -> list[AblationCell]:
    """LOO protocol per configuration cell, all sharing the base seed."""
    cfg.validate()
    cells: list[AblationCell] = []
    if axis == "components":
        variants = [
            (label, cfg.replace(components=dataclasses.replace(cfg.components, **flags)))
            for label, flags in COMPONENT_CELLS
        ]
        extras = [dict(COMPONENT_CELLS)[label] for label, _ in variants]
    elif axis == "fusion":
        from .fusion import FUSION_VARIANTS

        full = dataclasses.replace(cfg.components, caption_prompt=True,
                                   query_prompt=True, crossmodal_gate=True)
        variants = [
            (kind, cfg.replace(components=full, fusion_variant=kind))
            for kind in FUSION_VARIANTS
        ]
        extras = [{"fusion_variant": kind} for kind, _ in variants]
    elif axis == "qformer-grid":
        full = dataclasses.replace(cfg.components, caption_prompt=True,
                                   query_prompt=True, crossmodal_gate=True)
        variants = []
        extras = []
        for depth in QFORMER_DEPTH_GRID:
            for queries in QFORMER_QUERY_GRID:
                model_cfg = dataclasses.replace(cfg.model, queries=queries, depth=depth)
                variants.append((
                    f"q{queries}_d{depth}",
                    cfg.replace(components=full, model=model_cfg),
                ))
                extras.append({"queries": queries, "depth": depth})
    else:
        raise ConfigError(f"unknown ablation axis {axis!r}; expected one of {ABLATION_AXES}")

    for (label, cell_cfg), extra in zip(variants, extras):
        log.info("ablation cell %s", label)
        run = run_loo(cell_cfg)
        cells.append(AblationCell(label, extra,
                                  [f.report for f in run.folds], run.average))
    return cells


def emit_report(reports: list[FoldReport], path) -> None:
    """Write the per-fold CSV. Refuses empty input before touching the file."""
    if not reports:
        raise ContractError("emit_report called with no reports")
    path = Path(path)
    lines = [CSV_HEADER] + [r.csv_row() for r in reports]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _versions() -> dict:
    return {
        "promptfas": __version__,
        "numpy": np.__version__,
        "python": platform.python_version(),
    }


def write_manifest(cfg: RunConfig, outdir: Path) -> None:
    manifest = {
        "config_digest": cfg.digest(),
        "seed": cfg.seed,
        "steps": cfg.steps,
        "versions": _versions(),
    }
    (outdir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def emit_run(run: RunResult, outdir, figures: bool = True) -> Path:
    """Write report.csv, run.json, manifest.json and the figures."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    emit_report(run.reports(), outdir / "report.csv")
    write_manifest(run.config, outdir)
    payload = {
        "kind": "loo",
        "config": run.config.to_dict(),
        "digest": run.digest,
        "folds": [dataclasses.asdict(f.report) for f in run.folds],
        "average": dataclasses.asdict(run.average),
        "traces": [f.trace for f in run.folds],
        "scores": [
            {"live": f.live_scores.tolist(), "spoof": f.spoof_scores.tolist()}
            for f in run.folds
        ],
        "versions": _versions(),
    }
    (outdir / "run.json").write_text(
        json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")
    if figures:
        from . import plots

        plots.loss_curves([f.trace for f in run.folds],
                          [f.report.held_out for f in run.folds],
                          outdir / "loss_curves.png")
        plots.score_histograms(
            [(f.report.held_out, f.live_scores, f.spoof_scores) for f in run.folds],
            outdir / "score_hist.png")
    return outdir


ABLATION_CSV_HEADER = "cell,fold,held_out,hter,auc"


def emit_ablation(cells: list[AblationCell], axis: str, cfg: RunConfig,
                  outdir, figures: bool = True) -> Path:
    if not cells:
        raise ContractError("emit_ablation called with no cells")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    stem = axis.replace("-", "_")
    lines = [ABLATION_CSV_HEADER]
    for cell in cells:
        for rep in cell.folds:
            if rep.valid:
                lines.append(f"{cell.label},{rep.fold},{rep.held_out},"
                             f"{rep.hter:.6f},{rep.auc:.6f}")
        avg = cell.average
        lines.append(f"{cell.label},avg,-,{avg.hter:.6f},{avg.auc:.6f}")
    (outdir / f"{stem}.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    write_manifest(cfg, outdir)
    payload = {
        "kind": "ablation",
        "axis": axis,
        "config": cfg.to_dict(),
        "digest": cfg.digest(),
        "cells": [
            {
                "label": c.label,
                "extra": c.extra,
                "folds": [dataclasses.asdict(r) for r in c.folds],
                "average": dataclasses.asdict(c.average),
            }
            for c in cells
        ],
        "versions": _versions(),
    }
    (outdir / "ablation.json").write_text(
        json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")
    if figures:
        from . import plots

        if axis == "qformer-grid":
            plots.grid_heatmap(cells, QFORMER_QUERY_GRID, QFORMER_DEPTH_GRID,
                               outdir / f"{stem}.png")
        else:
            plots.cell_bars(cells, outdir / f"{stem}.png")
    return outdir
