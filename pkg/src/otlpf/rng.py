"""Counter-style random streams derived from a single master seed.

Every (purpose, repeat, time, stage) tuple gets its own Philox generator, so
the draws consumed by a run never depend on scheduling or thread count.
"""

import numpy as np

TRUTH_STATE = 0
TRUTH_OBS = 1
FILTER = 2
GROUND_TRUTH = 3
REFERENCE = 4

FORECAST = 0
ANALYSIS = 1


def stream(seed, *keys):
    """Independent generator for ``seed`` and a tuple of integer keys."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
