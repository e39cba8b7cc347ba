"""Cross-modal fusion and the classifier head.

Two stages: (1) a channel-squeeze gate mixes the two text features into one
language feature; (2) the language and vision features are projected to a low
dimension and combined through circulant-matrix products, i.e. each projected
vector circularly convolved with itself, summed across modalities. Simpler
drop-in variants (sum / product / concat) exist for ablations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import autodiff as ad
from . import layers as ly
from .autodiff import Tensor
from .errors import ConfigError, DomainError, NumericalError, ShapeError

FUSION_VARIANTS = ("sum", "product", "concat", "circulant")
PROB_FLOOR = 1e-12


def circulant_of(x: np.ndarray) -> np.ndarray:
    """Circulant matrix C with C[i, j] = x[(i - j) mod n].

    Column 0 is x itself and C @ y is the circular convolution of x and y.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ShapeError(f"circulant_of needs a non-empty vector, got shape {x.shape}")
    n = x.size
    idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    return x[idx]


@dataclass
class LanguageGateP:
    """Squeeze-and-gate weights: 2 -> hidden -> 2 with GELU then sigmoid."""

    fc1: ly.LinearP
    fc2: ly.LinearP

    @staticmethod
    def init(rng, hidden: int = 4) -> "LanguageGateP":
        return LanguageGateP(
            ly.LinearP.init(rng, 2, hidden, trainable=True),
            ly.LinearP.init(rng, hidden, 2, trainable=True),
        )

    def walk(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield from self.fc1.walk(f"{prefix}.fc1")
        yield from self.fc2.walk(f"{prefix}.fc2")


def gated_language_fusion(caption_feat: Tensor, query_feat: Tensor,
                          p: LanguageGateP) -> Tensor:
    """Per-sample scalar gates over the two text features.

    Squeeze both features to their channel means, run the tiny 2->r->2 MLP,
    sigmoid into gates (a_cap, a_qry) in (0, 1), and return
    a_cap * caption_feat + a_qry * query_feat.
    """
    if caption_feat.shape != query_feat.shape:
        raise ShapeError(
            f"language fusion features disagree: {caption_feat.shape} vs {query_feat.shape}"
        )
    squeezed = ad.concat(
        [ad.mean(caption_feat, axis=1, keepdims=True),
         ad.mean(query_feat, axis=1, keepdims=True)],
        axis=1,
    )  # (B, 2)
    gates = ad.sigmoid(ly.linear(ad.gelu(ly.linear(squeezed, p.fc1)), p.fc2))
    a_cap = ad.narrow(gates, 1, 0, 1)  # (B, 1)
    a_qry = ad.narrow(gates, 1, 1, 1)
    return ad.add(ad.mul(a_cap, caption_feat), ad.mul(a_qry, query_feat))


@dataclass
class ModalityFusionP:
    """Projections into the fusion space for the circulant variant."""

    w_text: Tensor
    w_vis: Tensor

    @staticmethod
    def init(rng, dim: int, n: int) -> "ModalityFusionP":
        if n < 2:
            raise ConfigError(f"fusion dimension must be >= 2, got {n}")
        std = ly.fan_in_std(dim)
        return ModalityFusionP(
            Tensor(rng.normal(0.0, std, size=(dim, n)), requires_grad=True),
            Tensor(rng.normal(0.0, std, size=(dim, n)), requires_grad=True),
        )

    def walk(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.w_text", self.w_text
        yield f"{prefix}.w_vis", self.w_vis


def circulant_fusion(lang: Tensor, vis: Tensor, p: ModalityFusionP) -> Tensor:
    """Project each modality to length n and sum their circular
    self-convolutions: z = (s~ * s~) + (v~ * v~), per sample."""
    s = ad.matmul(lang, p.w_text)  # (B, n)
    v = ad.matmul(vis, p.w_vis)
    return ad.add(ad.circular_conv(s, s), ad.circular_conv(v, v))


@dataclass
class ConcatFusionP:
    proj: ly.LinearP

    @staticmethod
    def init(rng, dim: int, n: int) -> "ConcatFusionP":
        return ConcatFusionP(ly.LinearP.init(rng, 2 * dim, n, trainable=True))

    def walk(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield from self.proj.walk(f"{prefix}.proj")


def fuse(kind: str, lang: Tensor, vis: Tensor, params) -> Tensor:
    """Dispatch over the fusion variants. Output width is d for sum/product
    and n for concat/circulant; the classifier adapts at construction."""
    if lang.shape != vis.shape:
        raise ShapeError(f"fusion features disagree: {lang.shape} vs {vis.shape}")
    if kind == "sum":
        return ad.add(lang, vis)
    if kind == "product":
        return ad.mul(lang, vis)
    if kind == "concat":
        return ly.linear(ad.concat([lang, vis], axis=1), params.proj)
    if kind == "circulant":
        return circulant_fusion(lang, vis, params)
    raise ConfigError(f"unknown fusion variant {kind!r}; expected one of {FUSION_VARIANTS}")


def fused_width(kind: str, dim: int, n: int) -> int:
    if kind in ("sum", "product"):
        return dim
    if kind in ("concat", "circulant"):
        return n
    raise ConfigError(f"unknown fusion variant {kind!r}; expected one of {FUSION_VARIANTS}")


@dataclass
class ClassifierP:
    """Two linear layers (in -> in//2 -> 2) followed by softmax."""

    fc1: ly.LinearP
    fc2: ly.LinearP

    @staticmethod
    def init(rng, n_in: int) -> "ClassifierP":
        hidden = max(n_in // 2, 1)
        return ClassifierP(
            ly.LinearP.init(rng, n_in, hidden, trainable=True),
            ly.LinearP.init(rng, hidden, 2, trainable=True),
        )

    def walk(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield from self.fc1.walk(f"{prefix}.fc1")
        yield from self.fc2.walk(f"{prefix}.fc2")


def classify(fused: Tensor, p: ClassifierP) -> Tensor:
    """(B, n) fused features -> (B, 2) class probabilities (rows sum to 1)."""
    if fused.shape[-1] != p.fc1.w.shape[0]:
        raise ShapeError(
            f"classifier expects width {p.fc1.w.shape[0]}, got {fused.shape}"
        )
    logits = ly.linear(ly.linear(fused, p.fc1), p.fc2)
    return ad.softmax(logits, axis=-1)


def cross_entropy(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over the batch of -log p[label], probabilities floored at 1e-12."""
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != probs.shape[0]:
        raise ShapeError(f"labels shape {labels.shape} does not match probs {probs.shape}")
    if not np.isin(labels, (0, 1)).all():
        raise DomainError("labels must be 0 (spoof) or 1 (live)")
    onehot = np.zeros(probs.shape)
    onehot[np.arange(labels.shape[0]), labels] = 1.0
    picked = ad.tsum(ad.mul(probs, onehot), axis=1)  # (B,)
    return ad.neg(ad.mean(ad.log(ad.maximum_const(picked, PROB_FLOOR)), axis=0))


def total_loss(loss_cls: Tensor, loss_align: Tensor | None) -> Tensor:
    """Unweighted sum of the classification and alignment terms."""
    if not np.isfinite(loss_cls.data).all():
        raise NumericalError("classification loss is non-finite")
    if loss_align is None:
        return loss_cls
    if not np.isfinite(loss_align.data).all():
        raise NumericalError("alignment loss is non-finite")
    return ad.add(loss_cls, loss_align)
