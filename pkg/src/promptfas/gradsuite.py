"""Finite-difference verification of every differentiable block.

Each case builds a reduced-width instance (B=4, d=32, n=8, M=4 by default),
takes a scalar of its output against a fixed random projection, and compares
tape gradients with central differences over every parameter group feeding
the block. ``run_suite`` repeats the whole set over several seeds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import fusion, prompts
from .autodiff import GradCheckReport, Tensor
from .data import DatasetSpec
from .model import Components, Model, ModelConfig
from .seeding import derive_rng

REDUCED = dict(batch=4, dim=32, fusion_n=8, queries=4, heads=4, depth=1, raw_dim=6)


@dataclass
class CaseResult:
    name: str
    seed: int
    report: GradCheckReport

    @property
    def passed(self) -> bool:
        return self.report.passed


def _probe(rng, shape) -> Tensor:
    return Tensor(rng.normal(size=shape))


def _feature(rng, shape) -> Tensor:
    return Tensor(rng.normal(size=shape), requires_grad=True)


def case_qformer(seed: int, h: float, tol: float, sample: int) -> CaseResult:
    rng = derive_rng(seed, "gradsuite-qformer")
    d = REDUCED["dim"]
    qf = prompts.QFormerP.init(rng, d, REDUCED["heads"], REDUCED["queries"], REDUCED["depth"])
    vis = _feature(rng, (REDUCED["batch"], d))
    probe = _probe(rng, (REDUCED["batch"], REDUCED["queries"], d))
    params = dict(qf.walk("qformer"))
    params["input.visual"] = vis
    report = ad.grad_check_params(
        lambda: ad.tsum(ad.mul(qf(vis), probe)), params,
        h=h, tol=tol, sample=sample, seed=seed,
    )
    return CaseResult("qformer_block", seed, report)


def case_language_gate(seed: int, h: float, tol: float, sample: int) -> CaseResult:
    rng = derive_rng(seed, "gradsuite-gate")
    d = REDUCED["dim"]
    gate = fusion.LanguageGateP.init(rng)
    t_cap = _feature(rng, (REDUCED["batch"], d))
    t_qry = _feature(rng, (REDUCED["batch"], d))
    probe = _probe(rng, (REDUCED["batch"], d))
    params = dict(gate.walk("gate"))
    params["input.t_cap"] = t_cap
    params["input.t_qry"] = t_qry
    report = ad.grad_check_params(
        lambda: ad.tsum(ad.mul(fusion.gated_language_fusion(t_cap, t_qry, gate), probe)),
        params, h=h, tol=tol, sample=sample, seed=seed,
    )
    return CaseResult("language_gate", seed, report)


def case_circulant_fusion(seed: int, h: float, tol: float, sample: int) -> CaseResult:
    rng = derive_rng(seed, "gradsuite-circulant")
    d, n = REDUCED["dim"], REDUCED["fusion_n"]
    p = fusion.ModalityFusionP.init(rng, d, n)
    lang = _feature(rng, (REDUCED["batch"], d))
    vis = _feature(rng, (REDUCED["batch"], d))
    probe = _probe(rng, (REDUCED["batch"], n))
    params = dict(p.walk("fusion"))
    params["input.lang"] = lang
    params["input.vis"] = vis
    report = ad.grad_check_params(
        lambda: ad.tsum(ad.mul(fusion.circulant_fusion(lang, vis, p), probe)),
        params, h=h, tol=tol, sample=sample, seed=seed,
    )
    return CaseResult("circulant_fusion", seed, report)


def case_classifier(seed: int, h: float, tol: float, sample: int) -> CaseResult:
    rng = derive_rng(seed, "gradsuite-classifier")
    n = REDUCED["fusion_n"]
    clf = fusion.ClassifierP.init(rng, n)
    fused = _feature(rng, (REDUCED["batch"], n))
    labels = rng.integers(0, 2, size=REDUCED["batch"])
    params = dict(clf.walk("classifier"))
    params["input.fused"] = fused
    report = ad.grad_check_params(
        lambda: fusion.cross_entropy(fusion.classify(fused, clf), labels),
        params, h=h, tol=tol, sample=sample, seed=seed,
    )
    return CaseResult("classifier", seed, report)


def case_alignment_loss(seed: int, h: float, tol: float, sample: int) -> CaseResult:
    rng = derive_rng(seed, "gradsuite-align")
    d = REDUCED["dim"]
    weight = prompts.init_alignment_weight(rng, d)
    t_cap = _feature(rng, (REDUCED["batch"], d))
    t_qry = _feature(rng, (REDUCED["batch"], d))
    params = {"align.weight": weight, "input.t_cap": t_cap, "input.t_qry": t_qry}
    report = ad.grad_check_params(
        lambda: prompts.alignment_loss(t_cap, t_qry, weight),
        params, h=h, tol=tol, sample=sample, seed=seed,
    )
    return CaseResult("alignment_loss", seed, report)


def case_total_loss(seed: int, h: float, tol: float, sample: int) -> CaseResult:
    """Full forward graph at reduced width, checked over every trainable."""
    rng = derive_rng(seed, "gradsuite-total")
    cfg = ModelConfig(dim=REDUCED["dim"], queries=REDUCED["queries"],
                      depth=REDUCED["depth"], heads=REDUCED["heads"],
                      fusion_n=REDUCED["fusion_n"])
    model = Model.build(cfg, Components(), "circulant", REDUCED["raw_dim"],
                        frozen_seed=seed, train_seed=seed + 1)
    raw = rng.normal(size=(REDUCED["batch"], REDUCED["raw_dim"]))
    caps = rng.normal(size=(REDUCED["batch"], REDUCED["dim"]))
    labels = rng.integers(0, 2, size=REDUCED["batch"])
    report = ad.grad_check_params(
        lambda: model.forward(raw, caps, labels).loss,
        model.trainable_parameters(), h=h, tol=tol, sample=sample, seed=seed,
    )
    return CaseResult("total_loss", seed, report)


CASES = (
    case_qformer,
    case_language_gate,
    case_circulant_fusion,
    case_classifier,
    case_alignment_loss,
    case_total_loss,
)


def run_suite(seeds=range(5), h: float = 1e-5, tol: float = 1e-4,
              sample: int = 24) -> list[CaseResult]:
    """All cases over all seeds; ``sample`` caps checked coords per tensor."""
    results = []
    for seed in seeds:
        for case in CASES:
            results.append(case(seed, h, tol, sample))
    return results


def format_results(results: list[CaseResult]) -> str:
    lines = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(
            f"[{status}] {r.name:18s} seed={r.seed} max_rel_err={r.report.max_rel_err:.3e} "
            f"(worst {r.report.worst_param}[{r.report.worst_index}], "
            f"{r.report.n_checked} coords)"
        )
    return "\n".join(lines)
