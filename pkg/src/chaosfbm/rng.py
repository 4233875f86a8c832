"""Counter-based random streams.

Every stream is a Philox generator whose 128-bit key encodes ``(seed, purpose)``
and whose 256-bit starting counter encodes ``(coordinate, particle, replica)``.
Streams are therefore addressable independently of how many other streams
exist or in which order they are drawn, which is what makes results
independent of thread count and of the system size N.
"""

from __future__ import annotations

from enum import IntEnum

import numpy as np

_U64 = (1 << 64) - 1


class Purpose(IntEnum):
    NOISE = 1
    INIT = 2
    AUX_NOISE = 3
    AUX_INIT = 4
    FREQ = 5
    TEST_FN = 6


def stream(seed: int, purpose: int, replica: int = 0, particle: int = 0, coord: int = 0) -> np.random.Generator:
    if seed < 0 or seed > _U64:
        raise ValueError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
    key = (int(purpose) << 64) | int(seed)
    # word 0 is left free for Philox's own block counter
    counter = [0, int(coord), int(particle), int(replica)]
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def normals(seed: int, purpose: int, replicas: int, particles: int, dim: int, size: int,
            replica_offset: int = 0) -> np.ndarray:
    """Standard normals shaped ``[replicas][particles][dim][size]``, one stream per cell."""
    out = np.empty((replicas, particles, dim, size))
    for r in range(replicas):
        for i in range(particles):
            for c in range(dim):
                out[r, i, c] = stream(seed, purpose, r + replica_offset, i, c).standard_normal(size)
    return out


def derive_seed(seed: int, *labels: int) -> int:
    """Deterministic 64-bit child seed, used for auxiliary systems."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(x) for x in labels))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
