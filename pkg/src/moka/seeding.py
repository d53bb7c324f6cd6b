"""Counter-based random streams derived from one 64-bit master seed.

A stream is keyed by ``(seed, stream id, step)``, so drawing from one stream
never shifts the numbers another stream produces.
"""

import numpy as np

INIT = 0
TASK = 1
BATCH = 2
VERIFY = 3
BENCH = 4

_MASK = (1 << 64) - 1


def stream(seed: int, stream_id: int, step: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed) & _MASK, stream_id, step])))
