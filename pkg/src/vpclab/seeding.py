"""Stable seed derivation for reproducible component RNG streams."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, *parts: object) -> int:
    """Mix a master seed with component labels into a 64-bit seed.

    The mixing is a SHA-256 digest over the decimal master seed and the
    string forms of the labels, so streams for different (component,
    instance) labels never collide or shift when another stream changes.
    """
    h = hashlib.sha256()
    h.update(str(int(master)).encode("ascii"))
    for part in parts:
        h.update(b"\x1f")
        h.update(str(part).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little")


def derive_rng(master: int, *parts: object) -> np.random.Generator:
    """A fresh PCG64 generator for the stream named by ``parts``."""
    return np.random.default_rng(derive_seed(master, *parts))
