"""Deterministic RNG stream splitting.

Every source of randomness in the library derives from one global seed.
A stream is addressed by a path of purpose strings and integer ids
(e.g. ``stream(seed, "pgd-start", sample_id)``), mapped onto numpy's
``SeedSequence`` spawn keys. String path parts are hashed with CRC32, which
is stable across platforms and Python versions, so identical (seed, path)
pairs always yield bitwise-identical draws. Distinct paths give statistically
independent streams, which is what lets per-sample work run serially or in
parallel with the same result.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_part(part: str | int) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if isinstance(part, (int, np.integer)):
        value = int(part)
        if value < 0:
            raise ValueError(f"stream path ints must be >= 0, got {value}")
        return value
    raise TypeError(f"stream path parts must be str or int, got {type(part)!r}")


def stream(seed: int, *path: str | int) -> np.random.Generator:
    """Return the generator for ``(seed, *path)``.

    The same arguments always return a generator in the same state.
    """
    key = tuple(_key_part(p) for p in path)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=key))


def per_sample_uniform(
    seed: int, purpose: str, ids: np.ndarray, dim: int,
    lo: float = -1.0, hi: float = 1.0,
) -> np.ndarray:
    """Uniform draws keyed by (seed, purpose, sample id), one row per id.

    Because each row comes from its own id-keyed stream, the draw for a given
    sample does not depend on which other samples are in the batch.
    """
    out = np.empty((len(ids), dim))
    for row, sample_id in enumerate(ids):
        out[row] = stream(seed, purpose, int(sample_id)).uniform(lo, hi, size=dim)
    return out
