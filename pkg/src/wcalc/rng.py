"""Counter-based random number streams.

Monte-Carlo code in this package never shares a single generator across
paths.  Each path derives its own Philox stream from (seed, stream ids),
so results are independent of chunking, thread scheduling, and the order
in which paths are simulated.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = ["stream", "thread_count"]

_THREAD_ENV = "WCALC_THREADS"


def stream(seed: int, *ids: int) -> np.random.Generator:
    """Return an independent generator keyed by ``seed`` and stream ids.

    Identical (seed, ids) always yields the identical stream; distinct id
    tuples yield statistically independent streams.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(i) for i in ids))
    return np.random.Generator(np.random.Philox(ss))


def thread_count() -> int:
    """Worker count for path-parallel Monte Carlo, from WCALC_THREADS (default 1)."""
    raw = os.environ.get(_THREAD_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)
