"""Stable seed derivation so concurrency cannot perturb randomness."""

from __future__ import annotations

import hashlib


def derive_seed(*parts: object) -> int:
    """64-bit seed derived from a path of identifiers.

    Uses blake2b over the '/'-joined string forms, so the same logical
    position in a run (master seed, lead, step, tool, ...) always receives
    the same seed regardless of scheduling or platform.
    """
    text = "/".join(str(part) for part in parts)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")
