"""The two prompt branches and the loss tying them together.

Caption prompts are frozen embedding lookups of tokenized captions. Query
prompts come from a small transformer whose learnable query tokens read the
visual feature through cross-attention. The alignment loss pulls the encoded
query feature toward a linear projection of the encoded caption feature.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import autodiff as ad
from . import layers as ly
from .autodiff import Tensor
from .errors import ConfigError, ShapeError

COSINE_FLOOR = 1e-12


@dataclass
class QFormerBlockP:
    ln_self: ly.LayerNormP
    self_attn: ly.AttentionP
    ln_cross: ly.LayerNormP
    cross_attn: ly.AttentionP
    ln_ffn: ly.LayerNormP
    ffn: ly.FeedForwardP

    @staticmethod
    def init(rng, dim: int, heads: int) -> "QFormerBlockP":
        return QFormerBlockP(
            ly.LayerNormP.init(dim, trainable=True),
            ly.AttentionP.init(rng, dim, heads, trainable=True),
            ly.LayerNormP.init(dim, trainable=True),
            ly.AttentionP.init(rng, dim, heads, trainable=True),
            ly.LayerNormP.init(dim, trainable=True),
            ly.FeedForwardP.init(rng, dim, 2 * dim, trainable=True),
        )

    def walk(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield from self.ln_self.walk(f"{prefix}.ln_self")
        yield from self.self_attn.walk(f"{prefix}.self_attn")
        yield from self.ln_cross.walk(f"{prefix}.ln_cross")
        yield from self.cross_attn.walk(f"{prefix}.cross_attn")
        yield from self.ln_ffn.walk(f"{prefix}.ln_ffn")
        yield from self.ffn.walk(f"{prefix}.ffn")


@dataclass
class QFormerP:
    """Learnable query tokens plus depth-many (self-attn, cross-attn, FFN)
    blocks, pre-norm with residuals throughout. The visual feature enters as
    the single key/value position of every cross-attention."""

    queries: Tensor
    blocks: list[QFormerBlockP] = field(default_factory=list)

    @staticmethod
    def init(rng, dim: int, heads: int, n_queries: int, depth: int) -> "QFormerP":
        if n_queries < 1:
            raise ConfigError(f"number of queries must be >= 1, got {n_queries}")
        if depth < 1:
            raise ConfigError(f"depth must be >= 1, got {depth}")
        queries = Tensor(rng.normal(0.0, ly.INIT_STD, size=(n_queries, dim)),
                         requires_grad=True)
        blocks = [QFormerBlockP.init(rng, dim, heads) for _ in range(depth)]
        return QFormerP(queries, blocks)

    def walk(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.queries", self.queries
        for i, blk in enumerate(self.blocks):
            yield from blk.walk(f"{prefix}.block{i}")

    def __call__(self, visual: Tensor) -> Tensor:
        """(B, d) visual features -> (B, M, d) query prompt tokens."""
        bsz, dim = visual.shape
        kv = ad.reshape(visual, (bsz, 1, dim))
        x = ad.expand_front(self.queries, bsz)  # (B, M, d)
        for blk in self.blocks:
            a = ly.layer_norm(x, blk.ln_self)
            x = ad.add(x, ly.attention(a, a, blk.self_attn))
            c = ly.layer_norm(x, blk.ln_cross)
            x = ad.add(x, ly.attention(c, kv, blk.cross_attn))
            f = ly.layer_norm(x, blk.ln_ffn)
            x = ad.add(x, ly.feed_forward(f, blk.ffn))
        return x


def init_alignment_weight(rng, dim: int) -> Tensor:
    """Learnable d x d projection applied to the caption feature inside the
    alignment loss. Starts near identity so the loss begins at roughly the raw
    cosine alignment."""
    return Tensor(np.eye(dim) + rng.normal(0.0, 0.01, size=(dim, dim)),
                  requires_grad=True)


def _row_norms(x: Tensor) -> Tensor:
    sq = ad.tsum(ad.mul(x, x), axis=1, keepdims=True)  # (B, 1)
    return ad.maximum_const(ad.sqrt(sq), COSINE_FLOOR)


def alignment_loss(caption_feat: Tensor, query_feat: Tensor, weight: Tensor) -> Tensor:
    """1 - mean_i cos(caption_feat_i @ W, query_feat_i); range [0, 2].

    Norms are floored at 1e-12, so degenerate zero rows produce a finite loss
    instead of a division by zero.
    """
    if caption_feat.shape != query_feat.shape:
        raise ShapeError(
            f"alignment_loss features disagree: {caption_feat.shape} vs {query_feat.shape}"
        )
    proj = ad.matmul(caption_feat, weight)  # (B, d)
    dots = ad.tsum(ad.mul(proj, query_feat), axis=1, keepdims=True)  # (B, 1)
    cos = ad.div(dots, ad.mul(_row_norms(proj), _row_norms(query_feat)))
    return ad.sub(1.0, ad.mean(ad.reshape(cos, (cos.shape[0],)), axis=0))
