"""Counter-based random streams.

Every stream is a Philox generator keyed by a hash of
``(master seed, purpose tag, index)``. A path's noise therefore depends only
on its own index, never on how an ensemble is split across blocks or workers.
"""

import hashlib

import numpy as np

_U64 = 2**64


def stream_key(seed, tag, index=0):
    """Return the 128-bit Philox key for ``(seed, tag, index)`` as two uint64."""
    if not 0 <= int(seed) < _U64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    h = hashlib.blake2b(digest_size=16)
    h.update(int(seed).to_bytes(8, "little"))
    h.update(str(tag).encode())
    h.update(int(index).to_bytes(8, "little", signed=False))
    return np.frombuffer(h.digest(), dtype="<u8").copy()


def stream(seed, tag, index=0):
    """Independent ``numpy.random.Generator`` for one (seed, tag, index)."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, tag, index)))


def block_normals(seed, tag, indices, shape):
    """Stack ``standard_normal(shape)`` draws from the streams of ``indices``.

    Draws fill in C order, so a longer ``shape[0]`` extends each stream's
    sequence without changing its prefix.
    """
    out = np.empty((len(indices),) + tuple(shape))
    for row, i in enumerate(indices):
        out[row] = stream(seed, tag, i).standard_normal(shape)
    return out


def derive_seed(seed, tag):
    """64-bit sub-seed for an independent purpose derived from the master seed."""
    return int(stream_key(seed, f"derive:{tag}")[0])
