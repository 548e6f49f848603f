"""Seeded, counter-based random streams.

Every random draw in the package goes through :func:`stream`, which maps a
root seed plus an integer key path onto an independent Philox generator.
Two calls with the same ``(seed, *keys)`` produce bit-identical draws,
regardless of the order in which other streams were consumed.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["stream", "key_of"]


def key_of(label: str) -> int:
    """Stable 32-bit integer for a string label (used as a stream key)."""
    return zlib.crc32(label.encode("utf-8"))


def stream(seed: int, *keys: int | str) -> np.random.Generator:
    """Return the generator for stream ``keys`` under root ``seed``.

    Parameters
    ----------
    seed : int
        Non-negative root seed.
    *keys : int or str
        Path identifying the sub-stream, e.g. ``(sample_index, "sticks")``.
        Strings are hashed with :func:`key_of`.
    """
    path = tuple(key_of(k) if isinstance(k, str) else int(k) for k in keys)
    ss = np.random.SeedSequence(int(seed), spawn_key=path)
    return np.random.Generator(np.random.Philox(ss))
