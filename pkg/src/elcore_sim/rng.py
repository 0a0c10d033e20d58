"""Seeded randomness with named substreams.

Every stochastic decision in the simulator draws from a stream derived
from (master seed, purpose label), so adding a consumer never perturbs
the draws of existing ones and runs replay byte-identically.
"""
from __future__ import annotations

import hashlib
import random


def child_seed(master: int, *labels: object) -> int:
    """Stable 64-bit seed derived from a master seed and labels.

    Uses blake2b rather than hash() so results do not depend on
    PYTHONHASHSEED or the process.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(str(master).encode())
    for lab in labels:
        h.update(b"/")
        h.update(str(lab).encode())
    return int.from_bytes(h.digest(), "big")


def substream(master: int, *labels: object) -> random.Random:
    return random.Random(child_seed(master, *labels))


def stable_hash64(*parts: object) -> int:
    """Process-independent 64-bit hash, used for DHT key placement."""
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(repr(p).encode())
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "big")
