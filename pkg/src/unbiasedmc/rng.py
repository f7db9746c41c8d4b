"""Named, counter-based random streams.

Every stream is a Philox generator keyed by ``(seed, purpose, *index)``, so a
chunk of work draws the same numbers no matter which worker runs it or in
which order chunks are scheduled.
"""

from __future__ import annotations

import numpy as np

# stream purposes
PRIOR = 1
BATCH = 2
LEVELS = 3


def stream(seed: int, purpose: int, *index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(purpose), *map(int, index)))
    return np.random.Generator(np.random.Philox(ss))


def chunk_bounds(total: int, chunk: int):
    """Yield ``(chunk_index, start, stop)`` covering range(total)."""
    for c, start in enumerate(range(0, total, chunk)):
        yield c, start, min(start + chunk, total)
