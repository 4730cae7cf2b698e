"""Deterministic RNG derivation.

All randomness in the package flows through ``np.random.Generator`` streams
derived here. Streams are keyed by stable integers (never ``hash()``, which
is salted per process) so that corpus-parallel work and checkpoint resume
reproduce bit-identically regardless of scheduling.
"""

from __future__ import annotations

import hashlib

import numpy as np

# Domain tags keep independently-derived streams from colliding.
TAG_ROW_INIT = 0x521
TAG_CORRUPT = 0xC0D
TAG_VIEWS = 0xA6E
TAG_BATCH_ORDER = 0xB0D
TAG_SYNTH = 0x5E7


def stable_hash(text: str) -> int:
    """64-bit digest of a string, stable across processes and runs."""
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


def rng_from(*keys: int) -> np.random.Generator:
    """Generator seeded by a tuple of integer keys."""
    return np.random.default_rng(np.random.SeedSequence([k & 0xFFFFFFFFFFFFFFFF for k in keys]))


def table_rng(tag: int, table_id: str, *extra: int) -> np.random.Generator:
    """Per-table substream: identical for identical ids, independent otherwise."""
    return rng_from(tag, stable_hash(table_id), *extra)
