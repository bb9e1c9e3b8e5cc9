"""Deterministic counter-based random streams.

Every random quantity in this package is a pure function of
``(seed, derivation path, draw index)``.  A :class:`Stream` holds a 64-bit
key; ``child(i, j, ...)`` derives an independent key, and each draw mixes
the key with a draw counter through the splitmix64 finalizer.  Because no
state is shared between streams, work can be chunked, reordered or run on
any number of threads without changing a single output bit.
"""

from __future__ import annotations

import numpy as np

_MULT1 = np.uint64(0xBF58476D1CE4E5B9)
_MULT2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_CHILD_SALT = np.uint64(0x8E5110F41FDC2A4D)
_DRAW_SALT = np.uint64(0xD6E8FEB86659FD93)

_U64_MASK = (1 << 64) - 1
_INV_2_53 = float(2.0**-53)


def _mix(x: np.ndarray | np.uint64) -> np.ndarray:
    """splitmix64 finalizer, vectorized over uint64 arrays."""
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        x = (x ^ (x >> np.uint64(30))) * _MULT1
        x = (x ^ (x >> np.uint64(27))) * _MULT2
        return x ^ (x >> np.uint64(31))


def child_keys(key: np.uint64, indices) -> np.ndarray:
    """Derive one independent child key per index (vectorized)."""
    idx = np.asarray(indices, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix((np.uint64(key) ^ _CHILD_SALT) + _GOLDEN * idx)


def raw_draws(key: np.uint64, ticks) -> np.ndarray:
    """Raw uint64 draws for the given draw counters under one key."""
    t = np.asarray(ticks, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix((np.uint64(key) ^ _DRAW_SALT) + _GOLDEN * t)


def to_uniform(u: np.ndarray) -> np.ndarray:
    """Map uint64 draws to doubles in [0, 1) using the top 53 bits."""
    return (u >> np.uint64(11)).astype(np.float64) * _INV_2_53


def to_sign(u: np.ndarray) -> np.ndarray:
    """Map uint64 draws to a fair +1/-1 from the top bit."""
    return np.where((u >> np.uint64(63)).astype(bool), 1.0, -1.0)


class Stream:
    """A deterministic random stream identified by a 64-bit key.

    Draws advance an internal counter; ``child`` derivation does not touch
    the counter, so parent and children never interact.
    """

    __slots__ = ("key", "_cursor")

    def __init__(self, seed: int):
        self.key = np.uint64(_mix(np.uint64(int(seed) & _U64_MASK)))
        self._cursor = 0

    @classmethod
    def _from_key(cls, key: np.uint64) -> "Stream":
        s = cls.__new__(cls)
        s.key = np.uint64(key)
        s._cursor = 0
        return s

    def child(self, *indices: int) -> "Stream":
        """Derive an independent stream addressed by an index path."""
        k = self.key
        for i in indices:
            k = np.uint64(child_keys(k, np.uint64(int(i) & _U64_MASK)))
        return Stream._from_key(k)

    def _take(self, n: int) -> np.ndarray:
        ticks = np.arange(self._cursor, self._cursor + n, dtype=np.uint64)
        self._cursor += n
        return raw_draws(self.key, ticks)

    def uniforms(self, n: int) -> np.ndarray:
        """Next ``n`` i.i.d. uniforms in [0, 1)."""
        return to_uniform(self._take(n))

    def signs(self, n: int) -> np.ndarray:
        """Next ``n`` i.i.d. fair signs (+1.0 or -1.0)."""
        return to_sign(self._take(n))

    def integers(self, n: int, bound: int) -> np.ndarray:
        """Next ``n`` integers in [0, bound).

        Uses modulo reduction; the bias is below bound/2**64 and is
        irrelevant for index sampling.
        """
        if bound <= 0:
            raise ValueError("bound must be positive")
        return (self._take(n) % np.uint64(bound)).astype(np.int64)

    def sample_distinct(self, population: int, k: int) -> np.ndarray:
        """Draw ``k`` distinct indices from range(population)."""
        if k > population:
            raise ValueError("cannot sample more items than the population holds")
        picked: list[int] = []
        seen = set()
        while len(picked) < k:
            for v in self.integers(k, population):
                if int(v) not in seen:
                    seen.add(int(v))
                    picked.append(int(v))
                    if len(picked) == k:
                        break
        return np.array(picked, dtype=np.int64)
