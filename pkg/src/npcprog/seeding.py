"""Deterministic seed derivation.

Every random decision in the package flows from a single root seed. Substreams
are derived from (root, purpose tags) so that e.g. dataset splitting, weight
init and epoch shuffling are independently reproducible. String tags are
hashed with blake2b, not the builtin hash(), so derivation is stable across
interpreter runs.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _tag_to_int(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.blake2b(str(tag).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def seed_sequence(root_seed: int, *tags) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(root_seed) & 0xFFFFFFFFFFFFFFFF]
                                  + [_tag_to_int(t) for t in tags])


def rng_for(root_seed: int, *tags) -> np.random.Generator:
    """Generator for the substream identified by (root_seed, *tags)."""
    return np.random.default_rng(seed_sequence(root_seed, *tags))
