"""
Seed derivation helpers

Every random draw in the pipeline comes from numpy's PCG64 generator seeded
from one base seed, so runs repeat exactly for a fixed config.
"""

import numpy as np

GENERATOR_ID = "numpy.PCG64"


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def derive_seed(base: int, *keys: int) -> int:
    """Stable child seed for (base, keys); independent streams per key tuple"""
    seq = np.random.SeedSequence(int(base), spawn_key=tuple(int(k) for k in keys))
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
