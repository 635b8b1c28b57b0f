"""Deterministic random-stream management.

All randomness in the package flows from one integer seed through named
substreams, so paired evaluations and replays see identical draws no
matter which other streams were consumed in between.
"""

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode())


def substream(seed: int, *path) -> np.random.Generator:
    """Generator for the substream named by `path` under `seed`.

    The same (seed, path) always yields the same stream; distinct paths
    are statistically independent.
    """
    seq = np.random.SeedSequence(seed, spawn_key=tuple(_key(p) for p in path))
    return np.random.default_rng(seq)
