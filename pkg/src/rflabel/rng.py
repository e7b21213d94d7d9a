"""Deterministic seed derivation and random stream construction.

Every random decision in the toolkit draws from a numpy Generator whose
seed is derived by hashing (master_seed, *names).  Streams for distinct
entities are therefore independent of iteration or scheduling order: a
run is reproducible no matter how the work is split across workers.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, *parts) -> int:
    """Stable 64-bit seed for the substream named by ``parts``."""
    text = ":".join([str(int(master))] + [str(p) for p in parts])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(master: int, *parts) -> np.random.Generator:
    """Counter-based (Philox) generator for the substream named by ``parts``."""
    return np.random.Generator(np.random.Philox(derive_seed(master, *parts)))
