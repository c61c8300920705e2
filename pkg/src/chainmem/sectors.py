"""Excitation-number sectors of a register of spin-1/2 sites.

States are integers read as bit patterns: bit ``k`` is site ``k`` and a set
bit is a spin up (an excitation). Site 0 is Alice's first spin. Within a
sector, states are ordered by increasing integer value.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from math import comb

import numpy as np

from .errors import DomainError

MAX_SITES = 24


@dataclass(frozen=True)
class SiteLayout:
    """Alice (A), connecting (C) and Bob (B) blocks of an open chain.

    A occupies sites ``[0, n_a)``, C ``[n_a, n_a + n_c)`` and B the last
    ``n_b`` sites.
    """

    n_a: int
    n_c: int
    n_b: int

    def __post_init__(self):
        for name in ("n_a", "n_c", "n_b"):
            if int(getattr(self, name)) != getattr(self, name):
                raise DomainError(f"{name} must be an integer")
        if self.n_a < 1 or self.n_b < 1 or self.n_c < 0:
            raise DomainError(
                f"need n_a >= 1, n_b >= 1, n_c >= 0; got ({self.n_a}, {self.n_c}, {self.n_b})"
            )
        if self.n_sites > MAX_SITES:
            raise DomainError(f"chain of {self.n_sites} sites exceeds the cap of {MAX_SITES}")

    @property
    def n_sites(self) -> int:
        return self.n_a + self.n_c + self.n_b

    @property
    def alice_sites(self) -> range:
        return range(0, self.n_a)

    @property
    def connector_sites(self) -> range:
        return range(self.n_a, self.n_a + self.n_c)

    @property
    def bob_sites(self) -> range:
        return range(self.n_a + self.n_c, self.n_sites)

    @property
    def bob_offset(self) -> int:
        """Bit position of Bob's first site."""
        return self.n_a + self.n_c

    @property
    def bob_mask(self) -> int:
        return ((1 << self.n_b) - 1) << self.bob_offset


@dataclass(frozen=True)
class SectorBasis:
    """Canonical basis of the ``excitations``-particle sector of ``site_count`` sites."""

    site_count: int
    excitations: int
    states: np.ndarray = field(repr=False)
    index_map: dict = field(repr=False, compare=False)

    @property
    def dim(self) -> int:
        return len(self.states)

    def __len__(self):
        return len(self.states)

    def index(self, pattern: int) -> int:
        try:
            return self.index_map[int(pattern)]
        except KeyError:
            raise DomainError(f"pattern {int(pattern)} is not in the {self.excitations}-excitation sector") from None

    def indices(self, patterns) -> np.ndarray:
        """Vectorized lookup; every pattern must belong to the sector."""
        patterns = np.asarray(patterns, dtype=np.int64)
        idx = np.searchsorted(self.states, patterns)
        idx_clipped = np.minimum(idx, max(self.dim - 1, 0))
        if self.dim == 0 or np.any(self.states[idx_clipped] != patterns):
            raise DomainError("pattern outside the sector basis")
        return idx

    def labels(self) -> list[str]:
        """Ket labels in site order (site 0 leftmost), as in ``|100>_ACB``."""
        return [pattern_to_ket(int(s), self.site_count) for s in self.states]


def enumerate_sector(site_count: int, n: int) -> SectorBasis:
    """Return the canonical basis of all ``site_count``-bit patterns of weight ``n``."""
    if site_count < 0 or site_count > MAX_SITES:
        raise DomainError(f"site_count must lie in [0, {MAX_SITES}], got {site_count}")
    if n < 0 or n > site_count:
        raise DomainError(f"excitation number {n} outside [0, {site_count}]")
    patterns = [sum(1 << k for k in sites) for sites in combinations(range(site_count), n)]
    states = np.array(sorted(patterns), dtype=np.int64)
    assert len(states) == comb(site_count, n)
    index_map = {int(s): k for k, s in enumerate(states)}
    return SectorBasis(site_count, n, states, index_map)


@dataclass(frozen=True)
class RegionSplit:
    """States of a sector grouped by the occupation pattern of a site subset.

    ``groups`` maps the region pattern (bits packed in the order of
    ``region``) to the ascending array of basis indices carrying it.
    """

    basis: SectorBasis
    region: tuple
    groups: dict

    def sizes(self) -> dict:
        return {key: len(idx) for key, idx in self.groups.items()}

    @property
    def empty(self) -> np.ndarray:
        """Indices of states with the region unoccupied (image of ``|0><0|_region``)."""
        return self.groups.get(0, np.zeros(0, dtype=np.int64))


def region_pattern(states: np.ndarray, region) -> np.ndarray:
    """Pack the bits of ``region`` (in the given order) into small integers."""
    states = np.asarray(states, dtype=np.int64)
    out = np.zeros(states.shape, dtype=np.int64)
    for k, site in enumerate(region):
        out |= ((states >> site) & 1) << k
    return out


def split_by_region(basis: SectorBasis, region) -> RegionSplit:
    region = tuple(int(r) for r in region)
    if any(r < 0 or r >= basis.site_count for r in region):
        raise DomainError(f"region {region} not inside [0, {basis.site_count})")
    if len(set(region)) != len(region):
        raise DomainError("region sites must be distinct")
    keys = region_pattern(basis.states, region)
    groups = {}
    for key in np.unique(keys):
        groups[int(key)] = np.flatnonzero(keys == key)
    return RegionSplit(basis, region, groups)


def popcount(x: int) -> int:
    return bin(x).count("1")


def pattern_to_ket(pattern: int, site_count: int) -> str:
    return format(pattern, f"0{site_count}b")[::-1] if site_count else ""


def ket_to_pattern(ket: str) -> int:
    """Inverse of :func:`pattern_to_ket`; ``'100'`` is site 0 up."""
    if not ket or set(ket) - {"0", "1"}:
        raise DomainError(f"not a bit string: {ket!r}")
    return int(ket[::-1], 2)
