"""Seed derivation.

Every random stream in the package descends from one root seed. Child seeds
are the first 8 bytes (little-endian) of ``blake2b(repr(parts))`` where
``parts`` is the tuple ``(root, *labels)``. Labels are plain strings or ints,
so per-lesion seeds depend only on ``(root, lesion_id)`` and never on
iteration order or worker assignment.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root: int, *labels: object) -> int:
    """Return a 63-bit child seed for ``root`` and a path of labels."""
    payload = repr((int(root),) + tuple(str(x) for x in labels)).encode("utf-8")
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    return int.from_bytes(digest, "little") & 0x7FFF_FFFF_FFFF_FFFF


def rng_for(root: int, *labels: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *labels))
