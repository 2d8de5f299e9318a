"""Named, splittable random streams.

Every consumer draws from its own Philox (counter-based, 64-bit) stream keyed
by ``(seed, purpose, *index)``, so dataset generation, sampling and
augmentation never share state and are reproducible across platforms.
"""
from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, purpose: str, *index: int) -> np.random.Generator:
    key = (zlib.crc32(purpose.encode("utf-8")),) + tuple(int(i) for i in index)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=key)))
