"""Deterministic seed fan-out.

One master seed governs all randomness in a pipeline invocation. Child
streams are derived through ``numpy.random.SeedSequence`` keyed on the
tuple ``(master, *tags)``; string tags are first mapped to 64-bit
integers via SHA-256 so the scheme is stable across platforms and
processes (no reliance on Python hash randomization).

The tag path is part of the public contract: re-running any command with
the same master seed reproduces every derived stream bit-for-bit, and
streams with different tag paths are statistically independent.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _tag_to_int(tag: int | str) -> int:
    if isinstance(tag, (int, np.integer)):
        value = int(tag)
        if value < 0:
            raise ValueError(f"seed tags must be non-negative, got {value}")
        return value
    digest = hashlib.sha256(str(tag).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def seed_sequence(master: int, *tags: int | str) -> np.random.SeedSequence:
    """SeedSequence for the stream identified by (master, *tags)."""
    entropy = (_tag_to_int(master),) + tuple(_tag_to_int(t) for t in tags)
    return np.random.SeedSequence(entropy)


def rng(master: int, *tags: int | str) -> np.random.Generator:
    """Fresh generator for the stream identified by (master, *tags)."""
    return np.random.default_rng(seed_sequence(master, *tags))


def derive_seed(master: int, *tags: int | str) -> int:
    """Collapse a stream identity into a single integer child seed."""
    return int(seed_sequence(master, *tags).generate_state(1, np.uint64)[0])
