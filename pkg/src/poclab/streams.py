"""Counter-based uniform streams.

Every uniform used by the samplers is addressed by ``(seed, site, tag, replica)``.
A stream for one ``(site, tag)`` pair is a Philox generator whose counter is
seeded with the site and tag; replica ``r`` reads the ``r``-th output.  Draws
therefore do not depend on the order in which sites or replica chunks are
processed.
"""

from __future__ import annotations

import numpy as np

# stream tags
MAIN = 0
RESIDUAL_A = 1
RESIDUAL_B = 2
BOUNDARY = 7
FIELD = 11

_BLOCK = 4  # Philox4x64 emits four 64-bit words per counter step


def master_key(seed: int) -> np.ndarray:
    """Derive the 128-bit Philox key from a user seed."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.SeedSequence(seed).generate_state(2, np.uint64)


def uniforms(key: np.ndarray, site: int, tag: int, start: int, count: int) -> np.ndarray:
    """Uniforms on (0, 1] for replicas ``start .. start+count-1`` of one site stream."""
    if start % _BLOCK:
        raise ValueError("replica chunks must start on a multiple of 4")
    counter = np.array([start // _BLOCK, site, tag, 0], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key, counter=counter))
    return 1.0 - gen.random(count)


def chunks(replicas: int, size: int):
    """Yield ``(start, count)`` replica chunks aligned to the Philox block size."""
    size = max(_BLOCK, size - size % _BLOCK)
    start = 0
    while start < replicas:
        count = min(size, replicas - start)
        yield start, count
        start += count
