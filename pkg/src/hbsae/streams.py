"""Hierarchical, reproducible random sub-streams.

A stream is identified by a root seed plus a path of keys (integers or
short string tags).  Two streams with the same seed and path yield the same
variates no matter when, where or in which worker they are consumed, which
is what lets draws be generated in parallel without changing results.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

__all__ = ["SeededStream"]


def _key(part) -> int:
    if isinstance(part, (bool, np.bool_)):
        raise TypeError("boolean stream keys are ambiguous")
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"stream keys must be non-negative, got {part}")
        return int(part)
    if isinstance(part, str):
        # offset keeps string tags disjoint from small integer indices
        return (1 << 32) + zlib.crc32(part.encode("utf-8"))
    raise TypeError(f"unsupported stream key type: {type(part).__name__}")


@dataclass(frozen=True)
class SeededStream:
    """Random stream addressed by ``(seed, path)``.

    Examples
    --------
    >>> s = SeededStream(7)
    >>> a = s.child("theta", 0).generator().random()
    >>> b = SeededStream(7).child("theta", 0).generator().random()
    >>> a == b
    True
    """

    seed: int
    path: tuple = ()

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        for part in self.path:
            _key(part)

    def child(self, *parts) -> "SeededStream":
        return SeededStream(self.seed, self.path + tuple(parts))

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(
            int(self.seed), spawn_key=tuple(_key(p) for p in self.path))

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed_sequence()))
