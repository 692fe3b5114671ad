"""Named random streams derived from a single root seed.

Every stochastic stage pulls its generator from ``named_stream(seed, *path)``
so that runs are reproducible bit-for-bit and independent stages never share
state. Path components are hashed, so adding a stream never perturbs the
draws of an existing one.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK = (1 << 63) - 1


def stream_key(*path: object) -> int:
    """Stable 63-bit integer derived from the stream path."""
    material = "\x1f".join(str(p) for p in path).encode("utf-8")
    digest = hashlib.blake2b(material, digest_size=8).digest()
    return int.from_bytes(digest, "little") & _MASK


def named_stream(seed: int, *path: object) -> np.random.Generator:
    """Generator for the sub-stream identified by ``path`` under ``seed``."""
    entropy = (int(seed) & _MASK, stream_key(*path))
    return np.random.default_rng(np.random.SeedSequence(entropy))
