"""Deterministic seed derivation and the FNV-1a hash used by the tokenizer."""

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


def derive_rng(seed: int, *tags: str) -> np.random.Generator:
    """Independent, reproducible stream for (seed, tags).

    Tag strings are hashed so the stream depends only on the values, never on
    call order or platform.
    """
    entropy = [seed & _MASK64] + [fnv1a64(t.encode("utf-8")) for t in tags]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
