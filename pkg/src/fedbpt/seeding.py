"""Deterministic seed fan-out.

Every random stream in a run is derived from the master seed and a tuple of
purpose tags (e.g. ``("client", round, client_id)``), so any component can be
replayed in isolation. The hash is blake2b truncated to 64 bits, which is
stable across platforms and Python versions (unlike ``hash()``).
"""

from __future__ import annotations

import hashlib

import numpy as np


def child_seed(master: int, *tags: object) -> int:
    """Derive a 64-bit child seed from ``master`` and the purpose tags."""
    payload = repr((int(master),) + tags).encode("utf-8")
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    return int.from_bytes(digest, "little")


def rng_from(seed: int) -> np.random.Generator:
    """PCG64 generator pinned as the package-wide algorithm."""
    return np.random.Generator(np.random.PCG64(seed))
