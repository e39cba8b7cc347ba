"""Encoder stubs: a trainable two-layer visual perceptron, a frozen one-block
text transformer, and the frozen token embedding table they share the
vocabulary with."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import autodiff as ad
from . import layers as ly
from .autodiff import Tensor
from .errors import ShapeError


def init_embedding_table(rng: np.random.Generator, vocab: int, dim: int) -> Tensor:
    """Frozen lookup table; row 0 is the PAD embedding."""
    return Tensor(rng.normal(0.0, ly.INIT_STD, size=(vocab, dim)), requires_grad=False)


def embed_tokens(table: Tensor, token_ids: np.ndarray) -> np.ndarray:
    """Lookup rows for integer id array of shape (..., L) -> (..., L, dim)."""
    ids = np.asarray(token_ids)
    if ids.min() < 0 or ids.max() >= table.data.shape[0]:
        raise ShapeError(
            f"token id outside embedding table of {table.data.shape[0]} rows"
        )
    return table.data[ids]


@dataclass
class VisualEncoderP:
    """Trainable MLP mapping raw sample vectors to the shared feature width."""

    fc1: ly.LinearP
    fc2: ly.LinearP

    @staticmethod
    def init(rng, raw_dim: int, dim: int) -> "VisualEncoderP":
        return VisualEncoderP(
            ly.LinearP.init(rng, raw_dim, dim, trainable=True),
            ly.LinearP.init(rng, dim, dim, trainable=True),
        )

    def walk(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield from self.fc1.walk(f"{prefix}.fc1")
        yield from self.fc2.walk(f"{prefix}.fc2")

    def __call__(self, raw: Tensor) -> Tensor:
        if raw.shape[-1] != self.fc1.w.shape[0]:
            raise ShapeError(
                f"visual encoder expects width {self.fc1.w.shape[0]}, got {raw.shape}"
            )
        return ly.linear(ad.gelu(ly.linear(raw, self.fc1)), self.fc2)


@dataclass
class TextEncoderP:
    """One pre-norm transformer block + mean pool + output projection.

    All parameters are frozen at construction; gradients flow through to the
    prompt inputs but never into these weights.
    """

    ln_attn: ly.LayerNormP
    attn: ly.AttentionP
    ln_ffn: ly.LayerNormP
    ffn: ly.FeedForwardP
    proj: ly.LinearP

    @staticmethod
    def init(rng, dim: int, heads: int) -> "TextEncoderP":
        return TextEncoderP(
            ly.LayerNormP.init(dim, trainable=False),
            ly.AttentionP.init(rng, dim, heads, trainable=False),
            ly.LayerNormP.init(dim, trainable=False),
            ly.FeedForwardP.init(rng, dim, 2 * dim, trainable=False),
            ly.LinearP.init(rng, dim, dim, trainable=False),
        )

    def walk(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield from self.ln_attn.walk(f"{prefix}.ln_attn")
        yield from self.attn.walk(f"{prefix}.attn")
        yield from self.ln_ffn.walk(f"{prefix}.ln_ffn")
        yield from self.ffn.walk(f"{prefix}.ffn")
        yield from self.proj.walk(f"{prefix}.proj")

    def __call__(self, x: Tensor) -> Tensor:
        """(B, L, d) token embeddings -> (B, d) pooled text feature."""
        if len(x.shape) != 3:
            raise ShapeError(f"text encoder expects (B, L, d), got {x.shape}")
        a = ly.layer_norm(x, self.ln_attn)
        x = ad.add(x, ly.attention(a, a, self.attn))
        x = ad.add(x, ly.feed_forward(ly.layer_norm(x, self.ln_ffn), self.ffn))
        pooled = ad.mean(x, axis=1)
        return ly.linear(pooled, self.proj)
