"""Named random sub-streams derived from one master seed."""

import zlib

import numpy as np


def rng_for(master_seed: int, *keys) -> np.random.Generator:
    """Generator keyed by ``master_seed`` and a path of names or integers.

    The same arguments always give the same stream; different key paths give
    statistically independent streams.
    """
    entropy = [int(master_seed)]
    for key in keys:
        entropy.append(key if isinstance(key, int) else zlib.crc32(str(key).encode()))
    return np.random.default_rng(np.random.SeedSequence(entropy))
