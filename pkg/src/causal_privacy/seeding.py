"""Seed handling shared by every stochastic routine.

All randomness flows through numpy's PCG64 bit generator. A call that needs
several independent streams spawns children from ``SeedSequence(seed)`` in a
fixed order, so results depend only on the integer seed.
"""
import zlib

import numpy as np


def rng(seed):
    """Return a PCG64 ``Generator``; passes an existing generator through."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def child_rngs(seed, count):
    """``count`` independent generators spawned from ``seed`` in index order."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def derive_seed(seed, *keys):
    """Deterministic 63-bit seed from a base seed and a tuple of keys.

    String keys are hashed with CRC32 so the mapping is stable across
    interpreter runs (unlike ``hash``).
    """
    entropy = [int(seed) & 0xFFFFFFFF]
    for key in keys:
        if isinstance(key, str):
            entropy.append(zlib.crc32(key.encode()))
        elif isinstance(key, float):
            entropy.append(zlib.crc32(repr(key).encode()))
        else:
            entropy.append(int(key) & 0xFFFFFFFF)
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))
