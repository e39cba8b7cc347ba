"""Anti-spoofing evaluation metrics.

Scores are live-class probabilities in [0, 1]. Conventions: a spoof sample
with score >= threshold is a false acceptance; a live sample with score <
threshold is a false rejection. AUC is the exact Mann-Whitney rank statistic
with half credit for ties.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DomainError, NumericalWarning

CSV_HEADER = "fold,held_out,threshold,far,frr,eer,hter,auc,seed,steps"


@dataclass
class ScoreSet:
    live: np.ndarray
    spoof: np.ndarray

    def __post_init__(self):
        self.live = np.asarray(self.live, dtype=np.float64)
        self.spoof = np.asarray(self.spoof, dtype=np.float64)
        if self.live.size == 0 or self.spoof.size == 0:
            raise ContractError("ScoreSet needs at least one live and one spoof score")
        if not (np.isfinite(self.live).all() and np.isfinite(self.spoof).all()):
            raise ContractError("ScoreSet scores must be finite")


def far_frr(scores: ScoreSet, threshold: float) -> tuple[float, float]:
    """(false acceptance rate, false rejection rate) at a threshold."""
    far = float(np.mean(scores.spoof >= threshold))
    frr = float(np.mean(scores.live < threshold))
    return far, frr


def eer_threshold(scores: ScoreSet) -> float:
    """Threshold minimizing |FAR - FRR| over midpoints of consecutive distinct
    pooled scores plus below-all/above-all sentinels. Ties break toward the
    smaller FAR + FRR, then the smaller threshold."""
    pooled = np.unique(np.concatenate([scores.live, scores.spoof]))
    candidates = [pooled[0] - 1.0]
    candidates.extend((pooled[:-1] + pooled[1:]) / 2.0)
    candidates.append(pooled[-1] + 1.0)
    best = None
    for thr in candidates:
        far, frr = far_frr(scores, thr)
        key = (abs(far - frr), far + frr, thr)
        if best is None or key < best[0]:
            best = (key, thr)
    return float(best[1])


def hter(scores: ScoreSet, threshold: float) -> float:
    far, frr = far_frr(scores, threshold)
    return (far + frr) / 2.0


def auc(scores: ScoreSet) -> float:
    """Exact probability that a random live score beats a random spoof score,
    ties counted half. Computed from average ranks in O(N log N); agrees
    exactly with the O(N^2) pairwise count because all intermediate values are
    half-integers."""
    live, spoof = scores.live, scores.spoof
    pooled = np.concatenate([live, spoof])
    order = np.argsort(pooled, kind="mergesort")
    ranks = np.empty(pooled.size, dtype=np.float64)
    i = 0
    while i < pooled.size:
        j = i
        while j < pooled.size and pooled[order[j]] == pooled[order[i]]:
            j += 1
        ranks[order[i:j]] = (i + j + 1) / 2.0  # average 1-based rank
        i = j
    u = ranks[: live.size].sum() - live.size * (live.size + 1) / 2.0
    return float(u / (live.size * spoof.size))


def clip_style_score(v: np.ndarray, class_texts: np.ndarray,
                     temperature: float) -> np.ndarray:
    """Softmax over cosine similarities of one feature vector against per-class
    text features, scaled by 1/temperature. Zero vectors are floored with a
    warning instead of dividing by zero."""
    if not temperature > 0:
        raise DomainError(f"temperature must be > 0, got {temperature}")
    v = np.asarray(v, dtype=np.float64)
    texts = np.asarray(class_texts, dtype=np.float64)
    nv = np.linalg.norm(v)
    nt = np.linalg.norm(texts, axis=1)
    if nv < 1e-12 or (nt < 1e-12).any():
        warnings.warn("zero-norm vector in clip_style_score; flooring",
                      NumericalWarning, stacklevel=2)
    cos = texts @ v / (np.maximum(nt, 1e-12) * max(nv, 1e-12))
    z = cos / temperature
    z -= z.max()
    e = np.exp(z)
    return e / e.sum()


@dataclass
class FoldReport:
    fold: int
    held_out: str
    threshold: float
    far: float
    frr: float
    eer: float
    hter: float
    auc: float
    seed: int
    steps: int
    valid: bool = True

    def csv_row(self) -> str:
        name = "avg" if self.fold < 0 else str(self.fold)
        return (
            f"{name},{self.held_out},{self.threshold:.6f},{self.far:.6f},"
            f"{self.frr:.6f},{self.eer:.6f},{self.hter:.6f},{self.auc:.6f},"
            f"{self.seed},{self.steps}"
        )


def score_fold(fold: int, held_out: str, scores: ScoreSet, seed: int, steps: int,
               threshold_policy: str = "eer", fixed_threshold: float = 0.5) -> FoldReport:
    """Evaluate one fold's scores into every reported rate."""
    eer_thr = eer_threshold(scores)
    eer_value = hter(scores, eer_thr)
    if threshold_policy == "eer":
        thr = eer_thr
    elif threshold_policy == "fixed":
        thr = fixed_threshold
    else:
        raise DomainError(f"unknown threshold policy {threshold_policy!r}")
    far, frr = far_frr(scores, thr)
    return FoldReport(
        fold=fold,
        held_out=held_out,
        threshold=thr,
        far=far,
        frr=frr,
        eer=eer_value,
        hter=(far + frr) / 2.0,
        auc=auc(scores),
        seed=seed,
        steps=steps,
    )


def average_report(folds: list[FoldReport]) -> FoldReport:
    """Arithmetic mean over valid folds, tagged fold=-1 / held_out='-'."""
    valid = [f for f in folds if f.valid]
    if not valid:
        raise ContractError("no valid folds to average")
    k = len(valid)
    return FoldReport(
        fold=-1,
        held_out="-",
        threshold=sum(f.threshold for f in valid) / k,
        far=sum(f.far for f in valid) / k,
        frr=sum(f.frr for f in valid) / k,
        eer=sum(f.eer for f in valid) / k,
        hter=sum(f.hter for f in valid) / k,
        auc=sum(f.auc for f in valid) / k,
        seed=valid[0].seed,
        steps=valid[0].steps,
    )
