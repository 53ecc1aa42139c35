"""Seeded random streams.

Every random draw of the project comes from `numpy.random.Generator` over PCG64. Independent
streams (one per training step, per sequence, ...) are derived from the run seed through
`SeedSequence` spawn keys, so a stream does not depend on how many draws others made.
"""

import numpy as np


def generator(seed, *stream):
    """Generator for `stream` (a tuple of non-negative ints) under the run `seed`."""
    sequence = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.PCG64(sequence))
