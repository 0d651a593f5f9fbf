"""Derived random streams.

Every consumer of randomness asks for a stream keyed by the experiment's
root seed plus a tuple of labels such as ``("seed", 3, "domain", 2, "noise")``.
Streams for different keys are statistically independent, so adding a new
consumer never perturbs the draws of an existing one.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_word(part: object) -> int:
    if isinstance(part, (int, np.integer)) and not isinstance(part, bool):
        if part < 0:
            raise ValueError(f"negative stream key {part}")
        return int(part)
    return zlib.crc32(str(part).encode("utf-8")) | (1 << 32)


def derive_seed(root_seed: int, *keys: object) -> np.random.SeedSequence:
    """Return the seed sequence for ``keys`` under ``root_seed``."""
    return np.random.SeedSequence(entropy=int(root_seed), spawn_key=tuple(_key_word(k) for k in keys))


def stream(root_seed: int, *keys: object) -> np.random.Generator:
    """Return an independent generator for ``keys`` under ``root_seed``."""
    return np.random.Generator(np.random.PCG64(derive_seed(root_seed, *keys)))
