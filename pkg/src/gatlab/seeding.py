"""
Seed tree: every random stream is derived from one integer seed plus a path
of keys, so no stream depends on how many draws another stream made.
"""

import zlib
from typing import Union

import numpy as np

Key = Union[int, str]


def _key_to_int(key: Key) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    if key < 0:
        # SeedSequence entropy must be non-negative
        return zlib.crc32(f"neg{key}".encode("utf-8"))
    return int(key)


def derive_seed_sequence(seed: int, *keys: Key) -> np.random.SeedSequence:
    entropy = [_key_to_int(seed)] + [_key_to_int(k) for k in keys]
    return np.random.SeedSequence(entropy)


def derive_rng(seed: int, *keys: Key) -> np.random.Generator:
    return np.random.default_rng(derive_seed_sequence(seed, *keys))
