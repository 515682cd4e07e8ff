"""Seeded random streams.

Every random draw in the package comes from a :class:`numpy.random.Generator`
backed by PCG64 (a published 128-bit-state permuted congruential generator
whose output stream is identical on all platforms).  Independent substreams
are derived from a master seed and a *purpose tag* path::

    substream(seed, "epoch", 3, "mi-public")

The key derivation is ``SeedSequence(seed, spawn_key=keys)`` where each tag
component is mapped to a 32-bit key: integers are used as-is (mod 2**32) and
strings through ``zlib.crc32`` of their UTF-8 bytes.  Two different tag
paths therefore never share a stream, and the stream for a given path does
not depend on how many other substreams were drawn before it.  That is what
lets the two MI estimators, or the cells of the evaluation matrix, run in any
order (or concurrently) with identical results.
"""

import zlib

import numpy as np

__all__ = ["tag_key", "substream", "check_random_state"]


def tag_key(tag):
    if isinstance(tag, (int, np.integer)):
        return int(tag) % (1 << 32)
    if isinstance(tag, str):
        return zlib.crc32(tag.encode("utf-8"))
    raise TypeError(f"purpose tags must be str or int, got {type(tag).__name__}")


def substream(seed, *tags):
    """Return a fresh Generator for ``(seed, *tags)``."""
    seed = int(seed)
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence(seed, spawn_key=tuple(tag_key(t) for t in tags))
    return np.random.Generator(np.random.PCG64(ss))


def check_random_state(random_state):
    """Coerce ``None`` / int / Generator into a Generator.

    ``None`` maps to seed 0 rather than OS entropy: reproducibility is the
    default everywhere in this package.
    """
    if random_state is None:
        return substream(0)
    if isinstance(random_state, np.random.Generator):
        return random_state
    if isinstance(random_state, (int, np.integer)):
        return substream(int(random_state))
    raise TypeError(f"cannot build a Generator from {random_state!r}")
