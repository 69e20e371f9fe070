"""Seed derivation.

Every stochastic routine takes an explicit integer seed. Sub-streams are
derived from ``(seed, key, key, ...)`` through :class:`numpy.random.SeedSequence`
spawn keys and fed to the counter-based Philox bit generator, so a given
(seed, keys) pair always yields the same stream regardless of call order.

Keys may be ints, strings or floats. Strings are hashed with CRC32 and floats
contribute their IEEE-754 bit pattern, so ``derive(s, "a", 1.3)`` is stable
across processes and platforms.
"""

import struct
import zlib

import numpy as np

SEED_MAX = 2**64 - 1


def _key_words(key):
    if isinstance(key, (bool, np.bool_)):
        return (int(key),)
    if isinstance(key, (int, np.integer)):
        key = int(key)
        if key < 0:
            raise ValueError(f"negative seed key {key}")
        words = []
        while True:
            words.append(key & 0xFFFFFFFF)
            key >>= 32
            if not key:
                return tuple(words)
    if isinstance(key, (float, np.floating)):
        lo, hi = struct.unpack("<II", struct.pack("<d", float(key)))
        return (0xF10A7, lo, hi)
    if isinstance(key, str):
        return (0x5721, zlib.crc32(key.encode("utf-8")))
    raise TypeError(f"unsupported seed key type {type(key).__name__}")


def check_seed(seed):
    if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool):
        raise TypeError(f"seed must be an integer, got {seed!r}")
    if not 0 <= int(seed) <= SEED_MAX:
        raise ValueError(f"seed must lie in [0, 2**64), got {seed}")
    return int(seed)


def seed_sequence(seed, *keys):
    spawn_key = tuple(w for k in keys for w in _key_words(k))
    return np.random.SeedSequence(entropy=check_seed(seed), spawn_key=spawn_key)


def make_rng(seed, *keys):
    """Philox generator for the sub-stream ``(seed, *keys)``."""
    return np.random.Generator(np.random.Philox(seed_sequence(seed, *keys)))


def derive_seed(seed, *keys):
    """Integer child seed, for handing a sub-stream to another seeded API."""
    return int(seed_sequence(seed, *keys).generate_state(2, np.uint32).view(np.uint64)[0])
