"""Counter-based random streams.

Every random draw in the package comes from a Philox stream keyed by
``(master_seed, index)``; the high counter word separates purposes.  A
path's noise therefore depends only on the master seed and the path index,
never on how paths are batched or which worker simulates them.
"""
from __future__ import annotations

import numpy as np

NOISE = 0
INITIAL = 1
BOOTSTRAP = 2
SAMPLER = 3
DERIVE = 4

_MASK = (1 << 64) - 1


def stream(seed: int, index: int = 0, purpose: int = NOISE) -> np.random.Generator:
    key = np.array([int(seed) & _MASK, int(index) & _MASK], dtype=np.uint64)
    counter = np.array([0, 0, 0, int(purpose) & _MASK], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def derive_seed(seed: int, index: int) -> int:
    """Independent 63-bit seed for sub-run ``index`` of a master seed."""
    return int(stream(seed, index, DERIVE).integers(0, 1 << 63))
