"""Counter-based random streams keyed by (seed, path).

Every stochastic decision in the package (dropout masks, masking plans,
shuffles, initialisation) draws from a Philox generator whose key is derived
from the run seed plus a path such as ``("dropout", layer, step)``.  Streams
for different paths are independent, and any single stream can be
regenerated without replaying the others.
"""

import zlib

import numpy as np


def _path_words(path):
    words = []
    for part in path:
        if isinstance(part, str):
            words.append(zlib.crc32(part.encode("utf-8")))
        else:
            part = int(part)
            if part < 0:
                raise ValueError(f"negative rng path component {part}")
            # split wide ints into 32-bit words so SeedSequence accepts them
            while True:
                words.append(part & 0xFFFFFFFF)
                part >>= 32
                if not part:
                    break
    return words


def seed_sequence(seed, *path):
    return np.random.SeedSequence(_path_words((seed, *path)))


def generator(seed, *path):
    """Return an independent ``np.random.Generator`` for ``(seed, *path)``."""
    return np.random.Generator(np.random.Philox(seed_sequence(seed, *path)))


def derive_seed(seed, *path):
    """Collapse ``(seed, *path)`` into a single 63-bit integer seed."""
    state = seed_sequence(seed, *path).generate_state(2, np.uint32)
    return int(state[0]) << 31 | int(state[1]) >> 1
