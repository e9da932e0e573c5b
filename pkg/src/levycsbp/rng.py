"""Counter-based random streams keyed by (experiment seed, path index).

Each path gets its own Philox stream, so results do not depend on how
paths are distributed across workers or in which order they run.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

ENVIRONMENT = 0
BRANCHING = 1


@lru_cache(maxsize=64)
def _key(seed: int) -> tuple:
    state = np.random.SeedSequence(int(seed)).generate_state(2, dtype=np.uint64)
    return int(state[0]), int(state[1])


def stream(seed: int, index: int, substream: int = ENVIRONMENT) -> np.random.Generator:
    """Independent generator for path ``index`` of experiment ``seed``.

    The path index and substream occupy the high counter words; draws
    advance the low words, so streams never overlap in practice.
    """
    if index < 0 or substream < 0:
        raise ValueError("path index and substream must be nonnegative")
    counter = np.array([0, 0, substream, index], dtype=np.uint64)
    key = np.array(_key(seed), dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=counter, key=key))
