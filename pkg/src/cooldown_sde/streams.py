"""Per-path Gaussian streams keyed by (master seed, path index).

Each path owns a Philox counter-based generator derived from
``SeedSequence(master_seed, spawn_key=(path,))``, so a path's draws do not
depend on which other paths are simulated alongside it or on how an
ensemble is split across workers.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtri

_INV_2_53 = 2.0**-53


def path_generator(master_seed: int, path: int) -> np.random.Generator:
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(int(path),))
    return np.random.Generator(np.random.Philox(seq))


def uniforms_open(gen: np.random.Generator, size) -> np.ndarray:
    """Uniforms on the open interval (0, 1) from the top 53 bits of raw 64-bit output."""
    n = size if isinstance(size, int) else math.prod(size)
    raw = gen.bit_generator.random_raw(n)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _INV_2_53
    return u.reshape(size)


def normals(gen: np.random.Generator, size) -> np.ndarray:
    """Standard normals by inverse-CDF transform."""
    return ndtri(uniforms_open(gen, size))


class PathStreams:
    """Block-buffered normal draws of shape ``(n_paths, d)`` per call to :meth:`next`."""

    def __init__(self, master_seed: int, paths, d: int, block: int | None = None):
        self.paths = np.asarray(paths, dtype=np.int64)
        self.d = int(d)
        self._gens = [path_generator(master_seed, p) for p in self.paths]
        n = max(len(self._gens), 1)
        self.block = block or max(64, min(8192, (1 << 23) // (n * self.d)))
        self._buf = np.empty((len(self._gens), self.block, self.d))
        self._pos = self.block

    def _refill(self):
        for i, g in enumerate(self._gens):
            self._buf[i] = normals(g, (self.block, self.d))
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._pos == self.block:
            self._refill()
        z = self._buf[:, self._pos, :].copy()
        self._pos += 1
        return z
