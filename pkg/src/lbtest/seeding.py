"""Hierarchical seed derivation.

Child seeds are hashes of the parent seed and a path of keys, so any stage
can be re-run in isolation without perturbing its siblings.
"""
import hashlib

import numpy as np


def child_seed(seed, *keys):
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed)).encode())
    for k in keys:
        h.update(b"\x1f")
        h.update(str(k).encode())
    return int.from_bytes(h.digest(), "little")


def rng_for(seed, *keys):
    return np.random.default_rng(child_seed(seed, *keys) if keys else int(seed))
