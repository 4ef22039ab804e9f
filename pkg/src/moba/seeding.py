"""Deterministic derivation of per-task RNG seeds."""

from __future__ import annotations

import hashlib


def derive_seed(*parts) -> int:
    """Collapse stringified parts into a stable 64-bit seed.

    SHA-256 based, so derived streams do not depend on platform hashing or
    process randomization, and seeds derived from one tag tuple never move
    when unrelated tag tuples are added or removed.
    """
    key = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
