"""Named random streams derived from a single seed."""
from __future__ import annotations

import zlib

import numpy as np


def stream_key(name: str, *keys: int) -> tuple[int, ...]:
    """Return the spawn key of a named stream."""
    return (zlib.crc32(name.encode("utf-8")), *(int(k) for k in keys))


def stream(seed: int, name: str, *keys: int) -> np.random.Generator:
    """Return an independent generator for stage ``name`` and integer ``keys``.

    Streams with different names or keys never share state, so a stage may be
    split over workers without changing any draw.
    """
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=stream_key(name, *keys))
    return np.random.Generator(np.random.PCG64(seq))
