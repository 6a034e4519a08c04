"""Seed-stream derivation.

Every random draw in a run comes from a generator built by :func:`stream`,
keyed by ``(root_seed, purpose, *ids)``. Keys are folded with splitmix64 so
that, e.g., the batch order of client 7 in round 12 does not depend on which
other clients were sampled.
"""
import hashlib

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _purpose_id(purpose):
    digest = hashlib.blake2b(purpose.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_seed(root_seed, purpose, *ids):
    """Fold ``root_seed``, a purpose string and integer ids into one 64-bit seed."""
    h = splitmix64(int(root_seed) & _MASK)
    h = splitmix64(h ^ _purpose_id(purpose))
    for i in ids:
        h = splitmix64(h ^ (int(i) & _MASK))
    return h


def stream(root_seed, purpose, *ids):
    return np.random.default_rng(derive_seed(root_seed, purpose, *ids))
