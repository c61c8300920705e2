"""Excitation-conserving open-chain Hamiltonians restricted to a sector.

Conventions (hbar = 1, a set bit is spin up, ``z_i = +-1/2``):

* XY:          H = sum_i J_i (X_i X_{i+1} + Y_i Y_{i+1}) / 2 + sum_i B_i Z_i / 2
* Heisenberg:  H = sum_i J_i (X_i X_{i+1} + Y_i Y_{i+1} + Z_i Z_{i+1}) / 2 + sum_i B_i Z_i / 2

In both models the amplitude for an excitation hopping across bond ``i`` is
exactly ``J_i``. The Heisenberg Ising part contributes ``2 J_i z_i z_{i+1}``
to the diagonal, which keeps the exchange isotropic.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DomainError
from .sectors import SectorBasis, SiteLayout, enumerate_sector

MODELS = ("heisenberg", "xy")
HERMITIAN_TOL = 1e-12
RECONSTRUCTION_TOL = 1e-10


class DisconnectedChainWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ChainSpec:
    layout: SiteLayout
    model: str
    couplings: np.ndarray
    fields: np.ndarray = None
    rng_seed: int | None = None

    def __post_init__(self):
        model = str(self.model).lower()
        if model not in MODELS:
            raise DomainError(f"unknown model {self.model!r}; expected one of {MODELS}")
        object.__setattr__(self, "model", model)
        n = self.layout.n_sites
        couplings = np.asarray(self.couplings, dtype=float).reshape(-1)
        fields = np.zeros(n) if self.fields is None else np.asarray(self.fields, dtype=float).reshape(-1)
        if couplings.shape != (n - 1,):
            raise DomainError(f"need {n - 1} couplings for {n} sites, got {couplings.size}")
        if fields.shape != (n,):
            raise DomainError(f"need {n} fields for {n} sites, got {fields.size}")
        if not (np.all(np.isfinite(couplings)) and np.all(np.isfinite(fields))):
            raise DomainError("couplings and fields must be finite")
        couplings.setflags(write=False)
        fields.setflags(write=False)
        object.__setattr__(self, "couplings", couplings)
        object.__setattr__(self, "fields", fields)

    @property
    def n_sites(self) -> int:
        return self.layout.n_sites

    @property
    def connected(self) -> bool:
        return bool(np.all(self.couplings != 0))

    def scaled(self, factor: float) -> "ChainSpec":
        """Same chain with every energy multiplied by ``factor``."""
        return ChainSpec(self.layout, self.model, self.couplings * factor, self.fields * factor, self.rng_seed)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "n_a": self.layout.n_a,
            "n_c": self.layout.n_c,
            "n_b": self.layout.n_b,
            "couplings": [float(x) for x in self.couplings],
            "fields": [float(x) for x in self.fields],
            "seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ChainSpec":
        layout = SiteLayout(int(data["n_a"]), int(data["n_c"]), int(data["n_b"]))
        return cls(layout, data["model"], data["couplings"], data.get("fields"), data.get("seed"))


def uniform_chain(layout: SiteLayout, model: str, coupling: float = 1.0) -> ChainSpec:
    return ChainSpec(layout, model, np.full(layout.n_sites - 1, float(coupling)))


def random_chain(layout: SiteLayout, model: str, coupling_range, seed: int) -> ChainSpec:
    """Couplings drawn i.i.d. uniform on ``coupling_range`` from ``numpy``'s PCG64."""
    lo, hi = (float(x) for x in coupling_range)
    if not lo > 0:
        raise DomainError(f"lower coupling bound must be positive, got {lo}")
    if hi < lo:
        raise DomainError(f"empty coupling range [{lo}, {hi}]")
    rng = np.random.default_rng(seed)
    couplings = rng.uniform(lo, hi, size=layout.n_sites - 1)
    return ChainSpec(layout, model, couplings, None, seed)


def mirror_chain(layout: SiteLayout, scale: float = 1.0) -> ChainSpec:
    """XY chain with J_i = scale * sqrt(i (N - i)), i = 1 .. N-1.

    The single-excitation block is ``2 * scale * S_x`` for spin ``(N - 1) / 2``,
    so an excitation is mirrored across the chain at ``t = pi / (2 * scale)``.
    """
    n = layout.n_sites
    i = np.arange(1, n)
    return ChainSpec(layout, "xy", scale * np.sqrt(i * (n - i)))


@dataclass(frozen=True)
class SectorHamiltonian:
    basis: SectorBasis
    matrix: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.basis.dim


def diagonal_energies(spec: ChainSpec, states: np.ndarray) -> np.ndarray:
    n = spec.n_sites
    states = np.asarray(states, dtype=np.int64)
    bits = (states[:, None] >> np.arange(n)) & 1
    z = bits - 0.5
    energy = z @ spec.fields
    if spec.model == "heisenberg":
        energy = energy + 2.0 * (z[:, :-1] * z[:, 1:]) @ spec.couplings
    return energy


def build_chain(spec: ChainSpec, n: int) -> SectorHamiltonian:
    """Dense matrix of ``spec``'s Hamiltonian on the ``n``-excitation sector."""
    if not spec.connected:
        warnings.warn(
            "chain has a zero coupling; the protocol cannot converge through it",
            DisconnectedChainWarning,
            stacklevel=2,
        )
    basis = enumerate_sector(spec.n_sites, n)
    states = basis.states
    mat = np.zeros((basis.dim, basis.dim), dtype=complex)
    mat[np.diag_indices(basis.dim)] = diagonal_energies(spec, states)
    for bond, coupling in enumerate(spec.couplings):
        if coupling == 0:
            continue
        hop = ((states >> bond) ^ (states >> (bond + 1))) & 1
        src = np.flatnonzero(hop)
        dst = basis.indices(states[src] ^ (3 << bond))
        mat[dst, src] += coupling
    return SectorHamiltonian(basis, mat)


@dataclass(frozen=True)
class Spectrum:
    basis: SectorBasis
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray = field(repr=False)

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.conj().T


def diagonalize(h) -> Spectrum:
    """Hermitian eigendecomposition with contract checks.

    Accepts a :class:`SectorHamiltonian` or a bare square array.
    """
    if isinstance(h, SectorHamiltonian):
        basis, mat = h.basis, h.matrix
    else:
        mat = np.asarray(h, dtype=complex)
        basis = None
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ContractError(f"expected a square matrix, got shape {mat.shape}")
    if mat.size and np.max(np.abs(mat - mat.conj().T)) > HERMITIAN_TOL:
        raise ContractError("matrix is not Hermitian within 1e-12")
    if mat.shape[0] == 0:
        return Spectrum(basis, np.zeros(0), np.zeros((0, 0), dtype=complex))
    evals, evecs = np.linalg.eigh(mat)
    spectrum = Spectrum(basis, evals, evecs)
    residual = np.max(np.abs(spectrum.reconstruct() - mat))
    if residual > RECONSTRUCTION_TOL * max(1.0, np.max(np.abs(mat))):
        raise ContractError(f"eigendecomposition residual {residual:.3e} exceeds tolerance")
    return spectrum
