"""Deterministic named random streams derived from one master seed.

Every source of randomness in the package draws from a stream obtained via
``stream(seed, name)``.  Streams with different names are statistically
independent, and a stream's output depends only on (seed, name) -- never on
how much entropy any other stream consumed.  This is what makes experiment
results independent of scheduling and parallelism.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _entropy_words(name: str) -> list[int]:
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=16).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


def stream(seed: int, name: str) -> np.random.Generator:
    """Return the generator for the stream ``name`` under master ``seed``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.default_rng(
        np.random.SeedSequence([int(seed)] + _entropy_words(name))
    )


def derive_seed(seed: int, name: str) -> int:
    """Derive a child integer seed, e.g. to hand to a nested trainer."""
    return int(stream(seed, name).integers(0, 2**63 - 1))
