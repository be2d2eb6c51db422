"""Deterministic derivation of per-purpose RNG streams from one master seed.

Every source of randomness in the package draws from a stream derived as
``default_rng([master_seed, crc32(purpose), *indices])``, so the full set of
logged numbers is a pure function of the master seed and the call site, never
of call order.
"""

import zlib

import numpy as np


def derive_rng(master_seed: int, purpose: str, *indices: int) -> np.random.Generator:
    """Independent generator for (master_seed, purpose, indices)."""
    return np.random.default_rng(derive_entropy(master_seed, purpose, *indices))


def derive_seed(master_seed: int, purpose: str, *indices: int) -> int:
    """Single integer seed derived from (master_seed, purpose, indices)."""
    rng = derive_rng(master_seed, purpose, *indices)
    return int(rng.integers(0, 2**63))


def derive_entropy(master_seed: int, purpose: str, *indices: int) -> list[int]:
    tag = zlib.crc32(purpose.encode("utf-8"))
    return [int(master_seed), tag, *[int(i) for i in indices]]
