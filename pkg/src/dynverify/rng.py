"""Named, splittable random streams.

Every stream is a Philox generator keyed by the master seed plus a tuple of
stream identifiers, so any component can derive its own stream without
consuming numbers from anyone else's.
"""
from __future__ import annotations

import zlib

import numpy as np

STREAMS = {
    "data": 1,
    "task-init": 2,
    "task-train": 3,
    "checker-init": 4,
    "checker-train": 5,
    "campaign": 6,
    "bfa": 7,
    "fit": 8,
}


def _stream_id(name: str | int) -> int:
    if isinstance(name, (int, np.integer)):
        return int(name)
    if name in STREAMS:
        return STREAMS[name]
    return zlib.crc32(name.encode("utf-8"))


def stream(seed: int, *keys: str | int) -> np.random.Generator:
    """Return an independent generator for ``(seed, *keys)``."""
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(_stream_id(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))
