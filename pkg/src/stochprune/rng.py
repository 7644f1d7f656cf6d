"""Counter-based random streams.

A stream is identified by ``(seed, step, purpose)``.  Draw ``i`` of a stream
depends only on that triple and ``i``, so per-weight noise does not depend on
the order in which other streams were consumed.
"""

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _purpose_id(purpose):
    if isinstance(purpose, str):
        return zlib.crc32(purpose.encode())
    return int(purpose) & _MASK64


def substream(seed, step=0, purpose=0):
    """Philox generator keyed by ``seed`` and positioned at ``(step, purpose)``."""
    counter = [0, 0, int(step) & _MASK64, _purpose_id(purpose)]
    return np.random.Generator(np.random.Philox(key=int(seed) & _MASK64, counter=counter))


def open_uniform(gen, size):
    """Uniforms strictly inside (0, 1)."""
    u = gen.random(size)
    tiny = np.finfo(np.float64).tiny
    return np.clip(u, tiny, 1.0 - np.finfo(np.float64).epsneg)
