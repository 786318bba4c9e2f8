"""Deterministic, platform-independent seed derivation.

Python's builtin hash() is salted per process, so derived seeds go through
sha256 instead. Every stochastic component (fold, model, tree, synthetic
stream) gets its seed from derive_seed(master, *path), which makes runs
reproducible regardless of execution order or thread count.
"""

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """Map an arbitrary mix of ints/strings to a stable 63-bit seed."""
    text = ":".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def rng_for(*parts) -> np.random.Generator:
    """Fresh Generator seeded from the derived seed of `parts`."""
    return np.random.default_rng(derive_seed(*parts))
