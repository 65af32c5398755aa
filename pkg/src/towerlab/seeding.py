"""Deterministic RNG streams derived from a single master seed.

Every phase of a run owns a fixed integer id; worker chunks inside a phase get
ids of their own.  Streams therefore do not depend on scheduling order or on
the number of workers, which is what makes artifact bytes reproducible.
"""

import numpy as np

# Phase ids; fixed forever so that old configs replay bit-identically.
PHASE_TAILS = 1
PHASE_BUILD = 2
PHASE_STATS = 3
PHASE_GEOMETRY = 4
PHASE_HYP = 5


def stream(master_seed: int, phase: int, chunk: int = 0) -> np.random.Generator:
    """Independent generator for (phase, chunk) under the master seed."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(phase), int(chunk)))
    return np.random.default_rng(ss)
