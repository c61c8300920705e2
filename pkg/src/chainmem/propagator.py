"""Sector time evolution and the projected contraction ``T_n``."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DomainError
from .hamiltonian import ChainSpec, Spectrum, build_chain, diagonalize
from .sectors import SectorBasis, SiteLayout, split_by_region

UNITARY_TOL = 1e-10
MAX_POWER = 10_000


@dataclass(frozen=True)
class SectorUnitary:
    basis: SectorBasis
    matrix: np.ndarray = field(repr=False)
    tau: float

    def unitarity_error(self) -> float:
        m = self.matrix
        if m.size == 0:
            return 0.0
        return float(np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0]))))


@dataclass(frozen=True)
class SectorContraction:
    """``|0><0|_B U_n`` restricted to the B-empty states of the sector.

    ``matrix`` is square over ``basis.states[empty]``. Rows and columns of
    B-occupied states are identically zero in the full form and are dropped.
    """

    basis: SectorBasis
    matrix: np.ndarray = field(repr=False)
    empty: np.ndarray = field(repr=False)
    tau: float

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def rectangular(self, unitary: SectorUnitary) -> np.ndarray:
        """The full-sector form ``Pi_{B=0} U_n`` (rows of occupied states zeroed)."""
        full = np.zeros_like(unitary.matrix)
        full[self.empty] = unitary.matrix[self.empty]
        return full

    def power(self, j: int) -> np.ndarray:
        return matrix_power(self.matrix, j)


def evolve(spectrum: Spectrum, tau: float) -> SectorUnitary:
    """``U_n(tau) = V diag(exp(-i E tau)) V^dagger``."""
    tau = float(tau)
    if not np.isfinite(tau):
        raise DomainError("tau must be finite")
    v = spectrum.eigenvectors
    phases = np.exp(-1j * spectrum.eigenvalues * tau)
    mat = (v * phases) @ v.conj().T
    u = SectorUnitary(spectrum.basis, mat, tau)
    err = u.unitarity_error()
    if err > UNITARY_TOL:
        raise ContractError(f"propagator not unitary: deviation {err:.3e}")
    return u


def build_T(u: SectorUnitary, layout: SiteLayout) -> SectorContraction:
    if u.basis is None or u.basis.site_count != layout.n_sites:
        raise DomainError("unitary basis does not match the chain layout")
    empty = split_by_region(u.basis, layout.bob_sites).empty
    return SectorContraction(u.basis, u.matrix[np.ix_(empty, empty)], empty, u.tau)


def apply(op, v) -> np.ndarray:
    mat = op.matrix if hasattr(op, "matrix") else np.asarray(op)
    v = np.asarray(v, dtype=complex)
    if v.shape[0] != mat.shape[1]:
        raise DomainError(f"dimension mismatch: operator {mat.shape}, vector {v.shape}")
    return mat @ v


def matrix_power(mat: np.ndarray, j: int) -> np.ndarray:
    """``mat ** j`` by repeated multiplication (no re-orthogonalization)."""
    if j < 0 or j > MAX_POWER:
        raise DomainError(f"power must lie in [0, {MAX_POWER}], got {j}")
    out = np.eye(mat.shape[0], dtype=complex)
    for _ in range(j):
        out = mat @ out
    return out


class ChainEvolver:
    """Per-chain cache of sector spectra and propagators.

    Spectra are computed lazily and reused; instances are cheap to share
    read-only across threads once warmed up.
    """

    def __init__(self, spec: ChainSpec):
        self.spec = spec
        self.layout = spec.layout
        self._spectra: dict[int, Spectrum] = {}
        self._unitaries: dict[tuple[int, float], SectorUnitary] = {}

    def hamiltonian(self, n: int):
        return build_chain(self.spec, n)

    def spectrum(self, n: int) -> Spectrum:
        if n not in self._spectra:
            self._spectra[n] = diagonalize(build_chain(self.spec, n))
        return self._spectra[n]

    def basis(self, n: int) -> SectorBasis:
        return self.spectrum(n).basis

    def unitary(self, n: int, tau: float) -> SectorUnitary:
        key = (n, float(tau))
        if key not in self._unitaries:
            self._unitaries[key] = evolve(self.spectrum(n), tau)
        return self._unitaries[key]

    def contraction(self, n: int, tau: float) -> SectorContraction:
        return build_T(self.unitary(n, tau), self.layout)
