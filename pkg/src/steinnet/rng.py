"""Counter-based seed streams.

Every random draw in the package comes from a generator obtained as
``stream(root, tag, *counters)``: the root seed, a generator tag and
integer counters (row, replication, window) are fed as entropy to a
``SeedSequence``, so any single window of any replication can be
regenerated in isolation.
"""

from __future__ import annotations

import numpy as np

STEIN = 1
OU = 2
OU_FLOOR = 3
SAMPLE = 4
CLI = 5

_MASK64 = (1 << 64) - 1


def stream(root: int, *keys: int) -> np.random.Generator:
    entropy = [int(root) & _MASK64, *(int(key) for key in keys)]
    if any(key < 0 for key in entropy):
        raise ValueError("stream keys must be non-negative integers")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def child_root(root: int, *keys: int) -> int:
    """A derived 64-bit root seed, for handing a whole sub-experiment its own tree."""
    entropy = [int(root) & _MASK64, *(int(key) for key in keys)]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0])
