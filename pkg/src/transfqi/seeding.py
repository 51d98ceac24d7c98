"""Deterministic seed derivation.

Child seeds are a SeedSequence hash of the parent seed and a tuple of
integer keys, so a stream depends only on what it is for, never on the
order in which streams are requested.
"""
import numpy as np


def derive_seed(*keys):
    """64-bit seed mixed from nonnegative integer keys."""
    ss = np.random.SeedSequence([int(k) & 0xFFFFFFFFFFFFFFFF for k in keys])
    return int(ss.generate_state(1, np.uint64)[0])


def rng_for(*keys):
    return np.random.default_rng(derive_seed(*keys))
