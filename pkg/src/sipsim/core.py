"""Lattice geometry, particle configurations, and splittable random streams.

Sites are integer coordinate tuples of length d. Two boundary modes exist:
the infinite lattice Z^d and a periodic torus of side L (coordinates are
always stored reduced mod L). Particle state comes in two equivalent views:
an ordered tuple of sites, which carries labels and is what the dynamics and
the couplings evolve, and a site -> count map with finite support, which is
what duality polynomials and the exact solver consume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np

Site = tuple
ParticleList = tuple

# Infinite-lattice walks abort rather than silently wrap beyond this bound.
COORD_LIMIT = 2**62


class CoordinateOverflowError(OverflowError):
    """A coordinate left the representable range on the infinite lattice."""


class EmptySiteError(ValueError):
    """Attempted to move a particle away from an empty site."""


@dataclass(frozen=True)
class Geometry:
    """Dimension plus boundary mode; L is None on the infinite lattice."""

    d: int
    L: int | None = None

    def __post_init__(self):
        if not isinstance(self.d, int) or self.d < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.d!r}")
        if self.L is not None and (not isinstance(self.L, int) or self.L < 3):
            raise ValueError(f"torus side must be an integer >= 3, got {self.L!r}")

    @property
    def is_torus(self) -> bool:
        return self.L is not None

    def wrap(self, site: Site) -> Site:
        if self.L is None:
            return site
        L = self.L
        return tuple(c % L for c in site)

    def shift(self, site: Site, axis: int, step: int) -> Site:
        """Move one coordinate by `step`, wrapping on the torus."""
        c = site[axis] + step
        if self.L is not None:
            c %= self.L
        elif abs(c) > COORD_LIMIT:
            raise CoordinateOverflowError(f"coordinate {c} beyond +-2^62")
        return site[:axis] + (c,) + site[axis + 1 :]

    def neighbors(self, site: Site) -> tuple[Site, ...]:
        """The 2d nearest neighbors of a site (minus then plus per axis)."""
        out = []
        for axis in range(self.d):
            out.append(self.shift(site, axis, -1))
            out.append(self.shift(site, axis, +1))
        return tuple(out)

    def l1_distance(self, x: Site, y: Site) -> int:
        """l1 distance; per-coordinate minimal wrapped distance on the torus."""
        if self.L is None:
            return sum(abs(a - b) for a, b in zip(x, y))
        L = self.L
        total = 0
        for a, b in zip(x, y):
            dm = (a - b) % L
            total += min(dm, L - dm)
        return total

    @property
    def n_sites(self) -> int:
        if self.L is None:
            raise ValueError("infinite lattice has no site count")
        return self.L**self.d

    def sites(self):
        """All torus sites in lexicographic order (first coordinate most significant)."""
        if self.L is None:
            raise ValueError("cannot enumerate the infinite lattice")
        return product(range(self.L), repeat=self.d)

    def site_index(self, site: Site) -> int:
        """Ordinal of a torus site under the sites() enumeration."""
        if self.L is None:
            raise ValueError("site_index requires a torus")
        idx = 0
        for c in site:
            idx = idx * self.L + c
        return idx


def occupation_of(particles) -> dict:
    """Collapse an ordered particle list to a site -> count map."""
    counts: dict = {}
    for x in particles:
        counts[x] = counts.get(x, 0) + 1
    return counts


def particles_of(counts) -> ParticleList:
    """Expand an occupation map to a particle tuple, sites in sorted order."""
    out = []
    for site in sorted(counts):
        out.extend([site] * counts[site])
    return tuple(out)


def move(counts, x: Site, y: Site) -> dict:
    """Move one particle from x to y; total count is conserved."""
    n = counts.get(x, 0)
    if n < 1:
        raise EmptySiteError(f"no particle at {x} to move")
    out = dict(counts)
    if n == 1:
        del out[x]
    else:
        out[x] = n - 1
    out[y] = out.get(y, 0) + 1
    return out


class RandomStream:
    """Deterministic uniform source; (seed, path) pins the entire sequence.

    Streams with distinct paths (in particular distinct derive_stream
    indices) are independent by seed-sequence spawning. Scalar draws are
    served from a prefetched buffer, so interleaving calls on the same
    stream object stays reproducible for a fixed call pattern.
    """

    _BUFFER = 8192

    __slots__ = ("seed", "path", "_gen", "_buf", "_pos")

    def __init__(self, seed: int, path=()):
        if not isinstance(seed, int) or seed < 0:
            raise ValueError(f"seed must be a nonnegative integer, got {seed!r}")
        path = tuple(path)
        for p in path:
            if not isinstance(p, int) or p < 0 or p >= 2**32:
                raise ValueError(f"stream path entries must be uint32, got {p!r}")
        self.seed = seed
        self.path = path
        ss = np.random.SeedSequence(entropy=seed, spawn_key=path)
        self._gen = np.random.Generator(np.random.PCG64(ss))
        self._buf = ()
        self._pos = 0

    def child(self, index: int) -> "RandomStream":
        """An independent stream addressed by extending the path."""
        return RandomStream(self.seed, self.path + (index,))

    def uniform(self) -> float:
        """One uniform draw on [0, 1)."""
        if self._pos >= len(self._buf):
            self._buf = self._gen.random(self._BUFFER).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u

    def exponential(self, rate: float) -> float:
        """Exponential waiting time with the given total rate."""
        return -math.log(1.0 - self.uniform()) / rate


def derive_stream(seed: int, index: int) -> RandomStream:
    """Stream number `index` of the family determined by the master seed."""
    return RandomStream(seed, (index,))
