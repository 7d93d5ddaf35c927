"""Per-path random streams that can be consumed in lockstep by batched solvers.

Every path owns its own :class:`numpy.random.Generator` seeded from
``(master_seed, *key, path_index)``.  Draws are buffered per path in blocks of
fixed size, so the values seen by a path depend only on its seed and on the
sequence of requests, never on how many other paths share the batch.
"""
from __future__ import annotations

import math

import numpy as np

DEFAULT_BLOCK = 1024


def path_generator(master_seed: int, *key: int) -> np.random.Generator:
    """Generator that is a pure function of ``master_seed`` and ``key``."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


class _Buffer:
    def __init__(self, num_paths, block, fill):
        self.block = block
        self.fill = fill  # fill(count) -> (num_paths, count) array
        self.data = np.empty((num_paths, 0))
        self.pos = 0

    def take(self, count):
        if self.pos + count > self.data.shape[1]:
            self.data = self.fill(max(self.block, count))
            self.pos = 0
        out = self.data[:, self.pos : self.pos + count]
        self.pos += count
        return out


class PathStreams:
    """A batch of independent per-path streams with a Generator-like surface.

    ``standard_normal(size)`` and ``integers(low, high, size)`` expect
    ``size[0] == num_paths`` and return arrays of that shape, where row ``p``
    is drawn from path ``p``'s own generator.
    """

    def __init__(self, generators, block: int = DEFAULT_BLOCK):
        self.generators = list(generators)
        self.block = block
        self._normal = _Buffer(len(self.generators), block, self._fill_normal)
        self._uniform = _Buffer(len(self.generators), block, self._fill_uniform)

    @classmethod
    def from_seed(cls, master_seed, key=(), paths=1, block=DEFAULT_BLOCK):
        """Streams for path indices ``paths`` (an int count or an iterable)."""
        if isinstance(paths, int):
            paths = range(paths)
        gens = [path_generator(master_seed, *key, p) for p in paths]
        return cls(gens, block=block)

    def spawn(self, n: int) -> list[PathStreams]:
        """``n`` batches of child streams, independent of this one and of each other."""
        children = [g.spawn(n) for g in self.generators]
        return [PathStreams([c[i] for c in children], block=self.block) for i in range(n)]

    @property
    def num_paths(self) -> int:
        return len(self.generators)

    def _fill_normal(self, count):
        return np.stack([g.standard_normal(count) for g in self.generators])

    def _fill_uniform(self, count):
        return np.stack([g.random(count) for g in self.generators])

    def _split(self, size):
        size = (size,) if np.isscalar(size) else tuple(size)
        if not size or size[0] != self.num_paths:
            raise ValueError(
                f"leading dimension of size {size} must equal num_paths={self.num_paths}"
            )
        return size, math.prod(size[1:])

    def standard_normal(self, size):
        size, count = self._split(size)
        return self._normal.take(count).reshape(size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return loc + scale * self.standard_normal(size)

    def random(self, size):
        size, count = self._split(size)
        return self._uniform.take(count).reshape(size)

    def integers(self, low, high=None, size=None):
        if high is None:
            low, high = 0, low
        u = self.random(size)
        return (low + np.floor(u * (high - low))).astype(np.int64)
