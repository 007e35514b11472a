"""Keyed random streams.

Every stochastic draw in the package (weight init, dropout masks, dataset
rotations, shuffling, synthetic images) comes from a generator keyed by
``(seed, stream, counter)``.  The generator is numpy's Philox4x64
counter-based bit generator seeded through ``SeedSequence``, so a draw never
depends on how many other draws happened before it.
"""
from __future__ import annotations

import numpy as np

INIT = 1
DROPOUT = 2
ROTATION = 3
SHUFFLE = 4
SYNTHETIC = 5


def stream(seed: int, stream_id: int, counter: int = 0) -> np.random.Generator:
    """Return an independent generator for ``(seed, stream_id, counter)``."""
    if seed < 0 or stream_id < 0 or counter < 0:
        raise ValueError("seed, stream_id and counter must be non-negative")
    ss = np.random.SeedSequence([int(seed), int(stream_id), int(counter)])
    return np.random.Generator(np.random.Philox(ss))
