"""Shared neural building blocks: linear layers, layer norm, multi-head
attention, and the feed-forward block. All parameters are plain Tensors held
in small dataclasses that can enumerate themselves for the optimizer."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError

INIT_STD = 0.02
LN_EPS = 1e-5


def _param(rng: np.random.Generator, shape, trainable: bool, std: float = INIT_STD) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=trainable)


def fan_in_std(d_in: int) -> float:
    """Variance-preserving scale so random feature maps keep O(1) outputs."""
    return 1.0 / math.sqrt(d_in)


def _zeros(shape, trainable: bool) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=trainable)


def _ones(shape, trainable: bool) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=trainable)


@dataclass
class LinearP:
    w: Tensor
    b: Tensor

    @staticmethod
    def init(rng, d_in: int, d_out: int, trainable: bool) -> "LinearP":
        return LinearP(
            _param(rng, (d_in, d_out), trainable, std=fan_in_std(d_in)),
            _zeros((d_out,), trainable),
        )

    def walk(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.w", self.w
        yield f"{prefix}.b", self.b


def linear(x: Tensor, p: LinearP) -> Tensor:
    return ad.add(ad.matmul(x, p.w), p.b)


@dataclass
class LayerNormP:
    g: Tensor
    b: Tensor

    @staticmethod
    def init(dim: int, trainable: bool) -> "LayerNormP":
        return LayerNormP(_ones((dim,), trainable), _zeros((dim,), trainable))

    def walk(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.g", self.g
        yield f"{prefix}.b", self.b


def layer_norm(x: Tensor, p: LayerNormP) -> Tensor:
    m = ad.mean(x, axis=-1, keepdims=True)
    c = ad.sub(x, m)
    v = ad.mean(ad.mul(c, c), axis=-1, keepdims=True)
    s = ad.sqrt(ad.add(v, LN_EPS))
    return ad.add(ad.mul(ad.div(c, s), p.g), p.b)


@dataclass
class AttentionP:
    q: LinearP
    k: LinearP
    v: LinearP
    o: LinearP
    heads: int

    @staticmethod
    def init(rng, dim: int, heads: int, trainable: bool) -> "AttentionP":
        if dim % heads != 0:
            raise ConfigError(f"attention heads {heads} must divide dim {dim}")
        return AttentionP(
            LinearP.init(rng, dim, dim, trainable),
            LinearP.init(rng, dim, dim, trainable),
            LinearP.init(rng, dim, dim, trainable),
            LinearP.init(rng, dim, dim, trainable),
            heads,
        )

    def walk(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        for tag, sub in (("q", self.q), ("k", self.k), ("v", self.v), ("o", self.o)):
            yield from sub.walk(f"{prefix}.{tag}")


def attention(x_q: Tensor, x_kv: Tensor, p: AttentionP) -> Tensor:
    """Multi-head scaled dot-product attention, queries from x_q, keys/values
    from x_kv. Shapes: (B, Lq, d) x (B, Lk, d) -> (B, Lq, d)."""
    bsz, lq, dim = x_q.shape
    lk = x_kv.shape[1]
    heads = p.heads
    dh = dim // heads

    def split(t: Tensor, length: int) -> Tensor:
        t = ad.reshape(t, (bsz, length, heads, dh))
        return ad.transpose(t, (0, 2, 1, 3))  # (B, H, L, dh)

    q = split(linear(x_q, p.q), lq)
    k = split(linear(x_kv, p.k), lk)
    v = split(linear(x_kv, p.v), lk)
    scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    probs = ad.softmax(scores, axis=-1)
    ctx = ad.matmul(probs, v)  # (B, H, Lq, dh)
    merged = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (bsz, lq, dim))
    return linear(merged, p.o)


@dataclass
class FeedForwardP:
    fc1: LinearP
    fc2: LinearP

    @staticmethod
    def init(rng, dim: int, hidden: int, trainable: bool) -> "FeedForwardP":
        return FeedForwardP(
            LinearP.init(rng, dim, hidden, trainable),
            LinearP.init(rng, hidden, dim, trainable),
        )

    def walk(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield from self.fc1.walk(f"{prefix}.fc1")
        yield from self.fc2.walk(f"{prefix}.fc2")


def feed_forward(x: Tensor, p: FeedForwardP) -> Tensor:
    return linear(ad.gelu(linear(x, p.fc1)), p.fc2)
