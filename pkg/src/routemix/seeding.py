"""Deterministic seed derivation shared across modules.

Every stochastic step in the pipeline draws from a generator derived from a
master seed plus a stable textual label, so runs reproduce bit-for-bit
regardless of execution order or parallel scheduling.
"""

from __future__ import annotations

import hashlib
import random

import numpy as np


def stable_u64(*parts: object) -> int:
    """Stable 64-bit hash of the given parts (order-sensitive)."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, byteorder="little", signed=False)


def derive_rng(master_seed: int, *parts: object) -> np.random.Generator:
    """Independent numpy generator for the stream named by ``parts``."""
    return np.random.default_rng([master_seed & 0xFFFFFFFFFFFFFFFF, stable_u64(*parts)])


def derive_pyrandom(master_seed: int, *parts: object) -> random.Random:
    """Independent stdlib generator; cheaper per-draw for scalar streams."""
    return random.Random(stable_u64(master_seed, *parts))
