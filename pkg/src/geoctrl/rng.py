"""Deterministic, splittable random streams.

Every stochastic component of a run draws from its own substream, derived
from one experiment seed plus a small integer path. Substreams with
distinct paths are statistically independent, so e.g. disturbance draws
never shift when a controller changes how many Monte-Carlo samples it
uses.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1

# Stream purpose codes. Fixed forever: changing them changes every output.
DISTURBANCE = 1
CONTROL = 2
MC_SHOCKS = 3
REGION = 4
OPTIMIZER = 5
SYSTEM_GEN = 6
BOOTSTRAP = 7


def stable_hash(token: str) -> int:
    """Map a string to a 64-bit int, stable across processes and runs."""
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(seed: int, *path) -> np.random.Generator:
    """Generator for the substream identified by ``(seed, *path)``.

    Path entries may be ints or strings; strings are hashed stably.
    """
    key = tuple(
        stable_hash(p) if isinstance(p, str) else int(p) & _MASK64 for p in path
    )
    ss = np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))
