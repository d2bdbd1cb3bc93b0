"""Configurations, jump laws, exchange moves and currents on a periodic lattice."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._rng import as_generator


class ModelError(ValueError):
    pass


def _as_disp(z, d):
    z = (z,) if np.isscalar(z) else tuple(z)
    if len(z) != d:
        raise ModelError(f"displacement {z} does not have dimension {d}")
    return tuple(int(c) for c in z)


@dataclass(frozen=True)
class JumpLaw:
    """Finite-range jump law ``p(z)`` on Z^d."""

    d: int
    rates: dict
    mean: tuple
    range: int

    @property
    def displacements(self):
        return list(self.rates)

    def rate(self, z):
        return self.rates.get(_as_disp(z, self.d), 0.0)

    def is_symmetric(self):
        return all(np.isclose(r, self.rates.get(tuple(-c for c in z), 0.0))
                   for z, r in self.rates.items())

    def __repr__(self):
        return f"JumpLaw(d={self.d}, rates={self.rates})"


def build_jump_law(d, entries, asymmetric=False):
    """Validate a list of ``(displacement, rate)`` pairs.

    Zero rates are dropped. With ``asymmetric=True`` the mean drift must be
    nonzero.
    """
    if d not in (1, 2):
        raise ModelError(f"dimension must be 1 or 2, got {d}")
    if isinstance(entries, dict):
        entries = list(entries.items())
    rates = {}
    for z, r in entries:
        z = _as_disp(z, d)
        r = float(r)
        if not np.isfinite(r) or r < 0:
            raise ModelError(f"negative or non-finite rate {r} at {z}")
        if all(c == 0 for c in z):
            if r != 0:
                raise ModelError("p(0) must vanish")
            continue
        if r > 0:
            rates[z] = rates.get(z, 0.0) + r
    if not rates:
        raise ModelError("jump law has empty support")
    mean = tuple(float(sum(z[i] * r for z, r in rates.items())) for i in range(d))
    if asymmetric and np.allclose(mean, 0.0):
        raise ModelError("asymmetric law requested but mean drift is zero")
    rng = 1 + max(max(abs(c) for c in z) for z in rates)
    return JumpLaw(d=d, rates=dict(sorted(rates.items())), mean=mean, range=rng)


def tasep_law(d=1):
    """Totally asymmetric nearest-neighbour law (plus symmetric e2 exchange in d=2)."""
    if d == 1:
        return build_jump_law(1, [((1,), 1.0)], asymmetric=True)
    return build_jump_law(2, [((1, 0), 1.0), ((0, 1), 0.5), ((0, -1), 0.5)],
                          asymmetric=True)


@dataclass(frozen=True)
class TorusGeometry:
    sides: tuple
    jump_range: int = 1

    def __post_init__(self):
        sides = tuple(int(s) for s in np.atleast_1d(self.sides))
        object.__setattr__(self, "sides", sides)
        if len(sides) not in (1, 2):
            raise ModelError("torus must be 1- or 2-dimensional")
        for s in sides:
            if s < 2 * self.jump_range + 2:
                raise ModelError(
                    f"side {s} too short for jump range {self.jump_range}")

    @property
    def d(self):
        return len(self.sides)

    @property
    def n_sites(self):
        return int(np.prod(self.sides))

    def index(self, x):
        x = np.atleast_1d(x)
        idx = 0
        stride = 1
        for c, s in zip(x, self.sides):
            idx += (int(c) % s) * stride
            stride *= s
        return idx

    def coords(self, i):
        out = []
        for s in self.sides:
            out.append(i % s)
            i //= s
        return tuple(out)

    def shift(self, i, z):
        return self.index(np.add(self.coords(i), z))

    def neighbour_table(self, displacements):
        """``table[k, i]`` is the site reached from ``i`` by displacement k."""
        tab = np.empty((len(displacements), self.n_sites), dtype=np.int64)
        for k, z in enumerate(displacements):
            for i in range(self.n_sites):
                tab[k, i] = self.shift(i, z)
        return tab

    def centred_coords(self):
        """Coordinates folded into ``[-s/2, s/2)``, shape ``(n_sites, d)``."""
        c = np.array([self.coords(i) for i in range(self.n_sites)], dtype=np.int64)
        s = np.array(self.sides)
        return (c + s // 2) % s - s // 2


def torus_for(law, sides):
    return TorusGeometry(tuple(np.atleast_1d(sides)), law.range)


class Configuration:
    """Occupation field stored bit-packed in 64-bit words."""

    __slots__ = ("geometry", "words", "count")

    def __init__(self, geometry, occupations):
        occ = np.asarray(occupations).astype(np.uint8).ravel()
        if occ.size != geometry.n_sites:
            raise ModelError("occupation array has the wrong length")
        if occ.max(initial=0) > 1:
            raise ModelError("occupations must be 0/1")
        self.geometry = geometry
        self.words = _pack(occ)
        self.count = int(occ.sum())

    @classmethod
    def _from_words(cls, geometry, words, count):
        self = cls.__new__(cls)
        self.geometry = geometry
        self.words = words
        self.count = count
        return self

    def occupations(self):
        return _unpack(self.words, self.geometry.n_sites)

    def __getitem__(self, i):
        return int((self.words[i >> 6] >> np.uint64(i & 63)) & np.uint64(1))

    def popcount(self):
        return int(sum(bin(int(w)).count("1") for w in self.words))

    def copy(self):
        return Configuration._from_words(self.geometry, self.words.copy(), self.count)

    def __eq__(self, other):
        return (isinstance(other, Configuration) and self.geometry == other.geometry
                and np.array_equal(self.words, other.words))

    def __repr__(self):
        occ = "".join(map(str, self.occupations()[:64]))
        return f"Configuration(N={self.geometry.n_sites}, n={self.count}, {occ}...)"


def _pack(occ):
    n = occ.size
    nw = (n + 63) // 64
    padded = np.zeros(nw * 64, dtype=np.uint64)
    padded[:n] = occ
    shifts = np.arange(64, dtype=np.uint64)
    return (padded.reshape(nw, 64) << shifts).sum(axis=1, dtype=np.uint64)


def _unpack(words, n):
    shifts = np.arange(64, dtype=np.uint64)
    bits = (words[:, None] >> shifts) & np.uint64(1)
    return bits.ravel()[:n].astype(np.uint8)


def sample_bernoulli(geometry, rho, rng=None):
    """I.i.d. Bernoulli(rho) occupations."""
    if not (0.0 < rho < 1.0):
        raise ModelError(f"density must lie in (0, 1), got {rho}")
    gen = as_generator(rng)
    occ = (gen.random(geometry.n_sites) < rho).astype(np.uint8)
    return Configuration(geometry, occ)


def apply_exchange(config, x, y, inplace=False):
    """Swap the occupations at sites ``x`` and ``y`` (indices or coordinates)."""
    g = config.geometry
    i = x if np.isscalar(x) else g.index(x)
    j = y if np.isscalar(y) else g.index(y)
    i, j = int(i) % g.n_sites, int(j) % g.n_sites
    if i == j:
        raise ModelError("exchange requires two distinct sites")
    out = config if inplace else config.copy()
    if out[i] != out[j]:
        one = np.uint64(1)
        out.words[i >> 6] ^= one << np.uint64(i & 63)
        out.words[j >> 6] ^= one << np.uint64(j & 63)
    return out


def instantaneous_current(config, x, direction, rho=None):
    """Instantaneous current across the bond ``(x, x + e_i)``.

    ``direction`` is 1 or 2. For the asymmetric direction this is
    ``eta_x (1 - eta_{x+e1})``; for the transverse direction
    ``(eta_{x+e2} - eta_x) / 2``.
    """
    g = config.geometry
    if direction not in range(1, g.d + 1):
        raise ModelError(f"direction {direction} invalid for d={g.d}")
    i = x if np.isscalar(x) else g.index(x)
    e = [0] * g.d
    e[direction - 1] = 1
    j = g.shift(int(i), e)
    if direction == 1:
        return float(config[i] * (1 - config[j]))
    return 0.5 * (config[j] - config[i])


def renormalized_current(config, x=0, direction=1, rho=0.5):
    """Degree-two current ``(eta_x - rho)(eta_{x+e1} - rho)``; zero for direction 2."""
    g = config.geometry
    if direction not in range(1, g.d + 1):
        raise ModelError(f"direction {direction} invalid for d={g.d}")
    if direction == 2:
        return 0.0
    i = x if np.isscalar(x) else g.index(x)
    j = g.shift(int(i), (1,) + (0,) * (g.d - 1))
    return (config[i] - rho) * (config[j] - rho)
