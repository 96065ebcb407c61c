"""Seeded randomness: one documented generator, one sub-seeding scheme.

Every random choice in the workbench flows from a single 64-bit master seed
through :func:`derive_seed`, which hashes the master seed together with
purpose tags (round index, client id, "sample", "train", ...). Two runs with
the same master seed therefore produce bit-identical streams on every
platform; two purposes never share a stream.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["derive_seed", "make_rng"]

_MASK64 = (1 << 64) - 1


def derive_seed(master_seed: int, *tags: object) -> int:
    """Derive a 64-bit sub-seed from a master seed and a tuple of purpose tags.

    The derivation is SHA-256 over a canonical text encoding, so it is stable
    across platforms and Python versions. Tags may be ints or strings.
    """
    payload = "|".join([str(int(master_seed) & _MASK64)] + [str(t) for t in tags])
    digest = hashlib.sha256(payload.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def make_rng(seed: int) -> np.random.Generator:
    """Create the workbench's generator (PCG64) for a 64-bit seed.

    PCG64 streams are reproducible across platforms for a fixed numpy major
    line; identical seeds yield identical streams.
    """
    return np.random.Generator(np.random.PCG64(int(seed) & _MASK64))
