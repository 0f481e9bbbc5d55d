"""Deterministic RNG derivation.

All randomness in the package flows through numpy Generators produced by
:func:`rng_for`. A seed plus a list of tags (strings or ints) maps to one
stream; distinct tag paths give statistically independent streams, and the
same path always reproduces the same stream regardless of call order.
"""

from __future__ import annotations

import zlib

import numpy as np


def _tag_value(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFF
    if isinstance(tag, str):
        return zlib.crc32(tag.encode())
    raise TypeError(f"rng tag must be int or str, got {type(tag).__name__}")


def rng_for(seed: int, *tags) -> np.random.Generator:
    """Derive an independent Generator for ``(seed, *tags)``."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_tag_value(t) for t in tags]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def segment_seed(seed: int, segment_index: int) -> int:
    """Stable per-segment seed for long-form generation."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(b"segment"), int(segment_index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
